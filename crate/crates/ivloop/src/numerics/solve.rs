use crate::error::{Error, Result};
use crate::numerics::{sym_eigen, Matrix};

/// Relative eigenvalue cutoff used when pseudo-inverting Gram matrices.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

/// Moore-Penrose pseudoinverse of a symmetric positive-semidefinite matrix.
///
/// Eigenvalues below `rel_tol` times the largest eigenvalue magnitude are
/// treated as zero; an eigenvalue below the negated cutoff means the input
/// was not PSD and is reported as an error rather than silently clamped.
pub fn pseudo_inverse(a: &Matrix, rel_tol: f64) -> Result<Matrix> {
    let e = sym_eigen(a)?;
    let d = e.values.len();
    let max_mag = e.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = rel_tol * max_mag;
    let mut inv = vec![0.0; d];
    for (i, &v) in e.values.iter().enumerate() {
        if v < -cutoff {
            return Err(Error::NotPsd { eigenvalue: v });
        }
        if v > cutoff {
            inv[i] = 1.0 / v;
        }
    }
    // V diag(inv) V^T
    let vd = e.vectors.matmul(&Matrix::from_diag(&inv));
    Ok(vd.matmul(&e.vectors.transpose()))
}

/// Minimum-norm least-squares solution of `A X = B` via normal equations.
///
/// Returns `pinv(A^T A) A^T B`, which coincides with the usual least-squares
/// solution when `A` has full column rank and picks the minimum-norm solution
/// otherwise.
pub fn least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::DimensionMismatch(format!(
            "least_squares: lhs has {} rows, rhs has {}",
            a.rows(),
            b.rows()
        )));
    }
    let gram_inv = pseudo_inverse(&a.gram(), DEFAULT_REL_TOL)?;
    let atb = a.transpose().matmul(b);
    Ok(gram_inv.matmul(&atb))
}
