//! Closed-form estimators and finite-sample error diagnostics.
//!
//! Everything here is expressed with minimum-norm pseudoinverse solves, so
//! rank-deficient designs (irrelevant or duplicated instruments) return
//! finite output instead of failing.

use crate::datagen::{clip, ClipBounds, Dataset, TaskParams};
use crate::error::{Error, Result};
use crate::numerics::{dot, least_squares, pseudo_inverse, sym_eigen, Matrix, DEFAULT_REL_TOL};

/// Fitted coefficients from one estimator.
#[derive(Clone, Debug)]
pub struct EstimatorOutput {
    pub beta_hat: Vec<f64>,
    /// First-stage coefficient, `q x p`. Absent for the single-stage method.
    pub theta_hat: Option<Matrix>,
    pub method: &'static str,
}

impl EstimatorOutput {
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(&self.beta_hat, x)
    }
}

fn check_nonempty(data: &Dataset) -> Result<()> {
    if data.n() == 0 {
        return Err(Error::InvalidArgument("estimator needs at least one sample".into()));
    }
    Ok(())
}

/// Ordinary least squares of the outcome on the treatment. Biased whenever
/// the treatment is correlated with the outcome noise.
pub fn ols(data: &Dataset) -> Result<EstimatorOutput> {
    check_nonempty(data)?;
    let beta = least_squares(&data.x, &data.y_col())?;
    Ok(EstimatorOutput { beta_hat: beta.col(0), theta_hat: None, method: "ols" })
}

/// Two-stage least squares: regress the treatment on the instrument, then
/// the outcome on the instrument-predicted treatment.
pub fn two_sls(data: &Dataset) -> Result<EstimatorOutput> {
    check_nonempty(data)?;
    let theta_hat = least_squares(&data.z, &data.x)?;
    let beta_hat = second_stage(&data.z, &theta_hat, &data.y, 0.0, 1.0)?;
    Ok(EstimatorOutput { beta_hat, theta_hat: Some(theta_hat), method: "2sls" })
}

/// Penalty placement for [`ridge_two_sls_with`].
///
/// `GdMatching` solves `(Z^T Z + tau I) theta = Z^T X` (and the analogue for
/// `beta`), the exact fixed point of the penalized gradient recursion, and is
/// the default. `Normalized` is the stationary point of the sample-averaged
/// objective, `((2/n) Z^T Z + tau I) theta = (2/n) Z^T X`; the two differ by
/// a factor of `n/2` in the effective penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RidgeConvention {
    #[default]
    GdMatching,
    Normalized,
}

/// Ridge-penalized two-stage least squares under the default
/// gradient-matching convention.
pub fn ridge_two_sls(data: &Dataset, lambda: f64, tau: f64) -> Result<EstimatorOutput> {
    ridge_two_sls_with(data, lambda, tau, RidgeConvention::GdMatching)
}

pub fn ridge_two_sls_with(
    data: &Dataset,
    lambda: f64,
    tau: f64,
    convention: RidgeConvention,
) -> Result<EstimatorOutput> {
    check_nonempty(data)?;
    if lambda < 0.0 || tau < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ridge penalties must be nonnegative, got lambda={lambda}, tau={tau}"
        )));
    }
    let data_weight = match convention {
        RidgeConvention::GdMatching => 1.0,
        RidgeConvention::Normalized => 2.0 / data.n() as f64,
    };

    let gram_z = data.z.gram().scale(data_weight).add_diag(tau);
    let ztx = data.z.transpose().matmul(&data.x).scale(data_weight);
    let theta_hat = pseudo_inverse(&gram_z, DEFAULT_REL_TOL)?.matmul(&ztx);

    let beta_hat = second_stage(&data.z, &theta_hat, &data.y, lambda, data_weight)?;
    Ok(EstimatorOutput { beta_hat, theta_hat: Some(theta_hat), method: "ridge-2sls" })
}

/// Solves `(w theta^T Z^T Z theta + lambda I) beta = w theta^T Z^T y`.
fn second_stage(
    z: &Matrix,
    theta_hat: &Matrix,
    y: &[f64],
    lambda: f64,
    data_weight: f64,
) -> Result<Vec<f64>> {
    let x_hat = z.matmul(theta_hat);
    let gram = x_hat.gram().scale(data_weight).add_diag(lambda);
    let mut rhs = x_hat.t_mat_vec(y);
    for v in rhs.iter_mut() {
        *v *= data_weight;
    }
    Ok(pseudo_inverse(&gram, DEFAULT_REL_TOL)?.mat_vec(&rhs))
}

/// Projects an estimate onto the coefficient norm ball.
pub fn clipped_beta(beta_hat: &[f64], bounds: &ClipBounds) -> Vec<f64> {
    clip(beta_hat, bounds.beta)
}

/// Standard deviation of the outcome noise `confound_y . u + eps` implied by
/// the task parameters.
pub fn sigma1_from_task(task: &TaskParams) -> f64 {
    let su = task.cov_u.mat_vec(&task.confound_y);
    (dot(&task.confound_y, &su) + task.noise_y * task.noise_y).sqrt()
}

/// Constants and the evaluated envelope of the finite-sample error bound.
/// This is a diagnostic scale with the hidden absolute constant taken as 1,
/// not a certified bound.
#[derive(Clone, Debug)]
pub struct BoundReport {
    pub n: usize,
    pub n_min: usize,
    /// Instrument concentration constant, `lambda_min(cov_z) / (6 B_z^2)`.
    pub k: f64,
    /// First-stage identification constant,
    /// `lambda_min(cov_z) sigma_min^2(theta) / (2 B_eps2^2)`.
    pub k0: f64,
    /// Finite-sample inflation factor multiplying the noise term.
    pub c_n: f64,
    /// Envelope `(q/n) (B_beta^2 / K + C(n)^2 sigma1^2)`.
    pub mse_bound: f64,
    pub c_const: f64,
    pub b_beta: f64,
    pub b_theta: f64,
    pub b_z: f64,
    pub b_eps2: f64,
    pub sigma1: f64,
    pub lambda_min_z: f64,
    pub sigma_min_theta: f64,
}

impl BoundReport {
    /// Large-sample limit of the inflation factor,
    /// `B_theta B_z / (lambda_min(cov_z) sigma_min^2(theta))`.
    pub fn c_n_limit(&self) -> f64 {
        self.b_theta * self.b_z
            / (self.lambda_min_z * self.sigma_min_theta * self.sigma_min_theta)
    }
}

/// Evaluates the finite-sample mean-squared-error envelope for the two-stage
/// estimator at sample size `n`.
///
/// `B_z` and `B_beta` come from `bounds` and must be finite; `B_theta`,
/// `sigma_min(theta)`, and `lambda_min(cov_z)` are computed from the task.
/// `sigma1` defaults to the value implied by the task noise parameters.
pub fn mse_bound(
    task: &TaskParams,
    bounds: &ClipBounds,
    b_eps2: f64,
    sigma1: Option<f64>,
    c_const: f64,
    n: usize,
) -> Result<BoundReport> {
    let p = task.p() as f64;
    let q = task.q() as f64;
    let degenerate = |reason: &str| Error::DegenerateBound { n, reason: reason.into() };

    if !bounds.z.is_finite() || !bounds.beta.is_finite() {
        return Err(degenerate("clip bounds on z and beta must be finite"));
    }
    if !(b_eps2 > 0.0) || !(c_const > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "b_eps2 and c_const must be positive, got {b_eps2} and {c_const}"
        )));
    }

    let b_z = bounds.z;
    let b_beta = bounds.beta;
    let eig_z = sym_eigen(&task.cov_z)?;
    let lambda_min_z = *eig_z.values.last().expect("cov_z nonempty");
    if !(lambda_min_z > 0.0) {
        return Err(degenerate("instrument covariance must be positive definite"));
    }
    let eig_theta = sym_eigen(&task.theta.gram())?;
    let b_theta = eig_theta.values[0].max(0.0).sqrt();
    let sigma_min_theta = eig_theta.values.last().expect("theta nonempty").max(0.0).sqrt();
    if !(sigma_min_theta > 0.0) {
        return Err(degenerate("theta must have full column rank"));
    }
    let sigma1 = sigma1.unwrap_or_else(|| sigma1_from_task(task));

    let k = lambda_min_z / (6.0 * b_z * b_z);
    let k0 = lambda_min_z * sigma_min_theta * sigma_min_theta / (2.0 * b_eps2 * b_eps2);

    let c2bz4 = c_const * c_const * b_z.powi(4);
    let cond_a = 4.0 * c2bz4 * (q + (4.0 * c2bz4 * k / q).ln() - 1.5);
    let cond_b = q * (1.5f64).exp() / k;
    let cond_c = p * p * (q + 1.0) * (q + 1.0) * k / (q * k0 * k0);
    let n_min_f = cond_a.max(cond_b).max(cond_c).max(1.0);
    let n_min = if n_min_f >= usize::MAX as f64 { usize::MAX } else { n_min_f.ceil() as usize };
    if n < n_min {
        return Err(Error::ThresholdNotMet { n, n_min });
    }

    let nf = n as f64;
    let log_kn_q = (k * nf / q).ln();
    if log_kn_q < 0.5 {
        return Err(degenerate("log(K n / q) fell below 1/2"));
    }
    let first_stage_dev =
        (2.0 * p * (q + 1.0) * b_eps2 * b_eps2 * log_kn_q / (lambda_min_z * nf)).sqrt();
    let design_margin =
        1.0 - c_const * b_z * b_z * (q.sqrt() + (log_kn_q - 0.5).sqrt()) / nf.sqrt();
    if design_margin <= 0.0 {
        return Err(degenerate("instrument design deviation term exceeds 1"));
    }
    let signal_margin = sigma_min_theta - first_stage_dev;
    if signal_margin <= 0.0 {
        return Err(degenerate("first-stage deviation exceeds sigma_min(theta)"));
    }

    let c_n = (b_theta + first_stage_dev) * b_z
        / (lambda_min_z * design_margin * design_margin * signal_margin * signal_margin);
    let mse_bound = (q / nf) * (b_beta * b_beta / k + c_n * c_n * sigma1 * sigma1);

    Ok(BoundReport {
        n,
        n_min,
        k,
        k0,
        c_n,
        mse_bound,
        c_const,
        b_beta,
        b_theta,
        b_z,
        b_eps2,
        sigma1,
        lambda_min_z,
        sigma_min_theta,
    })
}
