//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix entries must be finite, found {0}")]
    NonFinite(f64),

    #[error("matrix of dimension {dim} exceeds the supported limit {limit}")]
    TooLarge { dim: usize, limit: usize },

    #[error("matrix is not symmetric: max asymmetry {asym:e} exceeds tolerance {tol:e}")]
    NotSymmetric { asym: f64, tol: f64 },

    #[error("eigensolver failed to converge after {0} sweeps")]
    EigenNoConvergence(usize),

    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e}")]
    NotPsd { eigenvalue: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("iterate diverged at step {step}: entry magnitude {magnitude:e} exceeds limit")]
    Diverged { step: usize, magnitude: f64 },

    #[error(
        "sample size {n} is below the threshold {n_min} required by the error-bound constants"
    )]
    ThresholdNotMet { n: usize, n_min: usize },

    #[error("error bound is degenerate at n={n}: {reason}; increase n")]
    DegenerateBound { n: usize, reason: String },

    #[error("model state is corrupted: {0}")]
    CorruptedState(String),

    #[error("csv parse error at row {row}, column {col}: {msg}")]
    CsvParse { row: usize, col: String, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}
