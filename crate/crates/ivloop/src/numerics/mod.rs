//! Dense linear algebra and random sampling primitives.
//!
//! Everything here is sized for small regression problems (tens of rows and
//! columns, eigenproblems up to a few hundred), stored row-major in plain
//! `Vec<f64>`. Operations are written with fixed iteration order so results
//! are reproducible bit for bit.

mod eigen;
mod matrix;
mod rng;
mod solve;

pub use eigen::{sym_eigen, SymEigen, MAX_EIGEN_DIM};
pub use matrix::Matrix;
pub use rng::{sample_gaussian, GaussianSampler, RngStream};
pub use solve::{least_squares, pseudo_inverse, DEFAULT_REL_TOL};

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Element-wise `out += s * a`.
pub fn axpy(s: f64, a: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), out.len());
    for (o, x) in out.iter_mut().zip(a) {
        *o += s * x;
    }
}

/// Element-wise difference `a - b`.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
