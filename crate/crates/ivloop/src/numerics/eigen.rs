use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Largest dimension accepted by [`sym_eigen`]. Cyclic Jacobi is quadratic
/// per sweep in the number of off-diagonal entries, so this is a guard
/// against accidental misuse rather than a tuning knob.
pub const MAX_EIGEN_DIM: usize = 256;

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
const SYM_TOL: f64 = 1e-10;

/// Sweep convergence threshold: off-diagonal Frobenius mass relative to the
/// full Frobenius norm of the input.
const OFF_DIAG_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix.
///
/// `values` are sorted in descending order and `vectors` holds the matching
/// orthonormal eigenvectors as columns, so `A = V diag(values) V^T`.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

/// Full eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.
///
/// The input must be square, at most [`MAX_EIGEN_DIM`] on a side, and
/// symmetric to within `1e-10` relative to its largest entry. Rotations
/// sweep the strict upper triangle in row order until the off-diagonal
/// Frobenius mass drops below `1e-12 * ||A||_F`.
pub fn sym_eigen(a: &Matrix) -> Result<SymEigen> {
    let d = a.rows();
    if d != a.cols() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition requires a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if d > MAX_EIGEN_DIM {
        return Err(Error::TooLarge { dim: d, limit: MAX_EIGEN_DIM });
    }
    let scale = a.max_abs();
    let mut asym = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            asym = asym.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    if asym > SYM_TOL * scale.max(1.0) {
        return Err(Error::NotSymmetric { asym, tol: SYM_TOL * scale.max(1.0) });
    }

    // Work on the symmetrized copy so tiny input asymmetry cannot bias the
    // rotation angles.
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = 0.5 * (a.get(i, j) + a.get(j, i));
        }
    }
    let mut v = Matrix::identity(d);
    let frob = a.frob_norm();
    if frob == 0.0 || d == 0 {
        return Ok(SymEigen { values: vec![0.0; d], vectors: v });
    }
    let threshold = OFF_DIAG_TOL * frob;

    let off_diag = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    s += m[i * d + j] * m[i * d + j];
                }
            }
        }
        s.sqrt()
    };

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        if off_diag(&m) <= threshold {
            converged = true;
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (tau - (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                m[p * d + p] = app - t * apq;
                m[q * d + q] = aqq + t * apq;
                m[p * d + q] = 0.0;
                m[q * d + p] = 0.0;
                for i in 0..d {
                    if i != p && i != q {
                        let aip = m[i * d + p];
                        let aiq = m[i * d + q];
                        m[i * d + p] = c * aip - s * aiq;
                        m[p * d + i] = m[i * d + p];
                        m[i * d + q] = s * aip + c * aiq;
                        m[q * d + i] = m[i * d + q];
                    }
                }
                for i in 0..d {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    if !converged && off_diag(&m) > threshold {
        return Err(Error::EigenNoConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[j * d + j].partial_cmp(&m[i * d + i]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| m[i * d + i]).collect();
    let mut vectors = Matrix::zeros(d, d);
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..d {
            vectors.set(i, new_col, v.get(i, old_col));
        }
    }
    Ok(SymEigen { values, vectors })
}
