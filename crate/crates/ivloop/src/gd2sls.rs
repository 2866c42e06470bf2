//! Coupled gradient recursion solving both stages of the instrumental
//! regression at once.
//!
//! The inner iterate regresses the treatment on the instrument, the outer
//! iterate regresses the outcome on the instrument-predicted treatment, and
//! both move one gradient step per call:
//!
//! ```text
//! theta' = theta - eta  Z^T (Z theta - X)
//! beta'  = beta  - alpha theta^T Z^T (Z theta beta - y)
//! ```
//!
//! The outer update deliberately uses the pre-update `theta`. Below the rate
//! thresholds both iterates contract geometrically toward the closed-form
//! two-stage solution, with per-step factor certified by
//! [`contraction_factors`].

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{two_sls, EstimatorOutput};
use crate::numerics::{norm, sub, sym_eigen, Matrix};

/// Iterates whose entries exceed this magnitude are reported as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e30;

/// Step sizes for the outer (`alpha`) and inner (`eta`) updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    pub alpha: f64,
    pub eta: f64,
}

impl LearningRates {
    pub fn explicit(alpha: f64, eta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !(eta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rates must be positive, got alpha={alpha}, eta={eta}"
            )));
        }
        Ok(LearningRates { alpha, eta })
    }

    /// Three quarters of the stability thresholds.
    pub fn safe(data: &Dataset) -> Result<Self> {
        let (a, e) = max_learning_rates(data)?;
        LearningRates::explicit(0.75 * a, 0.75 * e)
    }

    /// Inverse largest squared singular values, the rate that zeroes the
    /// contraction factor on the dominant eigendirection.
    pub fn optimal(data: &Dataset) -> Result<Self> {
        let (a, e) = max_learning_rates(data)?;
        LearningRates::explicit(0.5 * a, 0.5 * e)
    }

    /// Checks the strict stability thresholds against a concrete dataset.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        let (a_max, e_max) = max_learning_rates(data)?;
        if self.alpha >= a_max || self.eta >= e_max {
            return Err(Error::InvalidArgument(format!(
                "rates (alpha={}, eta={}) exceed the stability thresholds ({a_max}, {e_max})",
                self.alpha, self.eta
            )));
        }
        Ok(())
    }
}

/// One point of the coupled recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct GDState {
    /// Inner iterate, `q x p`.
    pub theta: Matrix,
    /// Outer iterate, length `p`.
    pub beta: Vec<f64>,
    /// Step count since initialization.
    pub t: usize,
}

impl GDState {
    pub fn zero(p: usize, q: usize) -> Self {
        GDState { theta: Matrix::zeros(q, p), beta: vec![0.0; p], t: 0 }
    }

    pub fn max_abs(&self) -> f64 {
        let beta_max = self.beta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.theta.max_abs().max(beta_max)
    }

    pub fn is_finite(&self) -> bool {
        self.theta.all_finite() && self.beta.iter().all(|v| v.is_finite())
    }
}

/// Largest admissible step sizes `(alpha_max, eta_max)`: two over the largest
/// squared singular value of the predicted-treatment and instrument designs.
/// Degenerate all-zero designs yield infinity.
pub fn max_learning_rates(data: &Dataset) -> Result<(f64, f64)> {
    let eig_z = sym_eigen(&data.z.gram())?;
    let fit = two_sls(data)?;
    let x_hat = data.z.matmul(fit.theta_hat.as_ref().expect("first stage present"));
    let eig_xh = sym_eigen(&x_hat.gram())?;
    Ok((2.0 / eig_xh.values[0], 2.0 / eig_z.values[0]))
}

/// Per-step contraction factors: `gamma` for the outer iterate, `kappa` for
/// the inner one, and their maximum `lambda`. Values below one certify
/// geometric convergence.
#[derive(Clone, Copy, Debug)]
pub struct ContractionReport {
    pub gamma: f64,
    pub kappa: f64,
    pub lambda: f64,
}

pub fn contraction_factors(data: &Dataset, rates: &LearningRates) -> Result<ContractionReport> {
    let spread = |values: &[f64], rate: f64| {
        values.iter().fold(0.0f64, |m, &lam| m.max((1.0 - rate * lam).abs()))
    };
    let eig_z = sym_eigen(&data.z.gram())?;
    let fit = two_sls(data)?;
    let x_hat = data.z.matmul(fit.theta_hat.as_ref().expect("first stage present"));
    let eig_xh = sym_eigen(&x_hat.gram())?;
    let gamma = spread(&eig_xh.values, rates.alpha);
    let kappa = spread(&eig_z.values, rates.eta);
    Ok(ContractionReport { gamma, kappa, lambda: gamma.max(kappa) })
}

/// One exact step of the coupled recursion.
pub fn gd_step(state: &GDState, data: &Dataset, rates: &LearningRates) -> GDState {
    ridge_gd_step(state, data, rates, 0.0, 0.0)
}

/// One step with ridge penalties folded into both gradients. Zero penalties
/// take the unpenalized path exactly.
pub fn ridge_gd_step(
    state: &GDState,
    data: &Dataset,
    rates: &LearningRates,
    lambda: f64,
    tau: f64,
) -> GDState {
    let x_hat = data.z.matmul(&state.theta);
    let resid1 = x_hat.sub(&data.x);
    let mut theta_grad = data.z.transpose().matmul(&resid1);
    if tau != 0.0 {
        theta_grad = theta_grad.add(&state.theta.scale(tau));
    }
    let theta_next = state.theta.sub(&theta_grad.scale(rates.eta));

    let mut resid2 = x_hat.mat_vec(&state.beta);
    for (r, y) in resid2.iter_mut().zip(&data.y) {
        *r -= y;
    }
    let mut beta_grad = x_hat.t_mat_vec(&resid2);
    if lambda != 0.0 {
        for (g, b) in beta_grad.iter_mut().zip(&state.beta) {
            *g += lambda * b;
        }
    }
    let beta_next: Vec<f64> =
        state.beta.iter().zip(&beta_grad).map(|(b, g)| b - rates.alpha * g).collect();

    GDState { theta: theta_next, beta: beta_next, t: state.t + 1 }
}

/// Full recursion record: every state plus distances to the closed-form
/// two-stage solution.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<GDState>,
    /// `|beta_t - beta_hat|` per state.
    pub dist_beta: Vec<f64>,
    /// `|theta_t - theta_hat|_F` per state.
    pub dist_theta: Vec<f64>,
    pub contraction: ContractionReport,
    pub reference: EstimatorOutput,
}

impl Trajectory {
    /// Certified geometric envelope value `lambda^t`.
    pub fn lambda_pow(&self, t: usize) -> f64 {
        self.contraction.lambda.powi(t as i32)
    }

    pub fn last(&self) -> &GDState {
        self.states.last().expect("trajectory includes init")
    }
}

/// Runs `steps` updates from `init` (zero when absent), recording distances
/// against the closed-form solution. Iterates beyond [`DIVERGENCE_LIMIT`] or
/// with non-finite entries abort with a divergence error naming the step.
pub fn run_gd(
    data: &Dataset,
    rates: &LearningRates,
    steps: usize,
    init: Option<GDState>,
) -> Result<Trajectory> {
    let reference = two_sls(data)?;
    let contraction = contraction_factors(data, rates)?;
    let theta_hat = reference.theta_hat.clone().expect("first stage present");

    let state = init.unwrap_or_else(|| GDState::zero(data.p(), data.q()));
    if state.theta.rows() != data.q() || state.theta.cols() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "init theta is {}x{}, data needs {}x{}",
            state.theta.rows(),
            state.theta.cols(),
            data.q(),
            data.p()
        )));
    }
    if state.beta.len() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "init beta has length {}, data needs {}",
            state.beta.len(),
            data.p()
        )));
    }

    let mut states = Vec::with_capacity(steps + 1);
    let mut dist_beta = Vec::with_capacity(steps + 1);
    let mut dist_theta = Vec::with_capacity(steps + 1);
    let mut record = |s: &GDState| {
        dist_beta.push(norm(&sub(&s.beta, &reference.beta_hat)));
        dist_theta.push(s.theta.sub(&theta_hat).frob_norm());
    };
    record(&state);
    states.push(state);

    for step in 1..=steps {
        let next = gd_step(states.last().expect("nonempty"), data, rates);
        let magnitude = next.max_abs();
        if !next.is_finite() || magnitude > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { step, magnitude });
        }
        record(&next);
        states.push(next);
    }

    Ok(Trajectory { states, dist_beta, dist_theta, contraction, reference })
}
