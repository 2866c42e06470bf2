//! Instrumental-variable regression with an endogenous treatment, three ways:
//!
//! * closed-form estimators (OLS, two-stage least squares, ridge-regularized
//!   2SLS) built on a small dense linear-algebra kernel,
//! * a coupled gradient solver that runs the two stages simultaneously and
//!   comes with explicit step-size thresholds and contraction certificates,
//! * an attention-only looped model whose weights are constructed (not
//!   trained) so that one block application reproduces one solver step.
//!
//! The [`harness`] module drives Monte Carlo sweeps over synthetic tasks,
//! compares the estimators on in-context prediction error and coefficient
//! recovery, and writes CSV/SVG artifacts. Sweeps are deterministic for a
//! fixed seed: every simulation draws from its own counter-derived RNG
//! stream, so results do not depend on worker count or scheduling.

pub mod datagen;
pub mod error;
pub mod estimators;
pub mod gd2sls;
pub mod harness;
pub mod numerics;
pub mod transformer;

pub use error::{Error, Result};
