//! Monte Carlo experiment orchestration: seeded sweeps over sample size or
//! scenario knobs, per-simulation metrics, and aggregation into CSV-ready
//! records.
//!
//! Every simulation index `k` owns the RNG stream `(seed, k)`, so results
//! are a pure function of the config no matter how simulations are
//! scheduled. Parallel execution collects per-simulation outcomes into a
//! buffer ordered by index and aggregates sequentially, which keeps the
//! output byte-identical to a sequential run.

mod io;

pub use io::{
    convergence_svg, export_csv, ingest_csv, metrics_to_csv, svg_line_plot, sweep_svg, Series,
};

use serde::{Deserialize, Serialize};

use crate::datagen::{
    generate_prompt, sample_task, ClipBounds, Dataset, ScenarioVariant, TaskParams,
};
use crate::error::{Error, Result};
use crate::estimators::{clipped_beta, ols, ridge_two_sls, two_sls};
use crate::gd2sls::{run_gd, ContractionReport, GDState, LearningRates};
use crate::numerics::RngStream;
use crate::transformer::{
    build_block, build_ridge_block, compute_mask_bounds, embed, extract_coefficients, read_y,
    LoopedModel,
};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How learning rates for the recursion and the constructed model are
/// chosen: conservative (3/4 of the divergence threshold), optimal
/// (1/2, which minimizes the contraction factor), or fixed values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatesMode {
    Safe,
    Optimal,
    Explicit { alpha: f64, eta: f64 },
}

impl RatesMode {
    pub fn resolve(&self, data: &Dataset) -> Result<LearningRates> {
        match self {
            RatesMode::Safe => LearningRates::safe(data),
            RatesMode::Optimal => LearningRates::optimal(data),
            RatesMode::Explicit { alpha, eta } => LearningRates::explicit(*alpha, *eta),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Ols,
    TwoSls,
    RidgeTwoSls,
    Tf,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Ols => "ols",
            EstimatorKind::TwoSls => "2sls",
            EstimatorKind::RidgeTwoSls => "ridge-2sls",
            EstimatorKind::Tf => "tf",
        }
    }

    pub fn from_label(s: &str) -> Result<Self> {
        match s {
            "ols" => Ok(EstimatorKind::Ols),
            "2sls" => Ok(EstimatorKind::TwoSls),
            "ridge-2sls" => Ok(EstimatorKind::RidgeTwoSls),
            "tf" => Ok(EstimatorKind::Tf),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

impl Serialize for EstimatorKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for EstimatorKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        EstimatorKind::from_label(&s).map_err(serde::de::Error::custom)
    }
}

/// The quantity swept along the x axis. Grids must be nonempty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Sample sizes, with the configured scenario fixed.
    N(Vec<usize>),
    /// Instrument-strength multipliers at fixed `n`.
    IvStrength(Vec<f64>),
    /// Confounder-strength multipliers at fixed `n`.
    Endogeneity(Vec<f64>),
    /// Effective instrument counts at fixed `n`.
    UnderId(Vec<usize>),
}

impl SweepAxis {
    fn is_empty(&self) -> bool {
        match self {
            SweepAxis::N(g) => g.is_empty(),
            SweepAxis::IvStrength(g) => g.is_empty(),
            SweepAxis::Endogeneity(g) => g.is_empty(),
            SweepAxis::UnderId(g) => g.is_empty(),
        }
    }

    /// Expands to `(sweep value, variant, n)` triples.
    fn points(&self, base: &ScenarioVariant, n: usize) -> Vec<(f64, ScenarioVariant, usize)> {
        match self {
            SweepAxis::N(grid) => {
                grid.iter().map(|&ni| (ni as f64, base.clone(), ni)).collect()
            }
            SweepAxis::IvStrength(grid) => grid
                .iter()
                .map(|&r| (r, ScenarioVariant::IvStrength(r), n))
                .collect(),
            SweepAxis::Endogeneity(grid) => grid
                .iter()
                .map(|&r| (r, ScenarioVariant::EndogeneityStrength(r), n))
                .collect(),
            SweepAxis::UnderId(grid) => grid
                .iter()
                .map(|&q_eff| (q_eff as f64, ScenarioVariant::UnderIdentified { q_eff }, n))
                .collect(),
        }
    }
}

/// Full description of one experiment. Serializable as plain JSON; absent
/// fields take the defaults below.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Scenario label written to the output rows.
    pub label: String,
    pub scenario: ScenarioVariant,
    pub sweep: SweepAxis,
    pub p: usize,
    pub q: usize,
    /// Sample size for sweeps over non-`n` axes.
    pub n: usize,
    pub sims: usize,
    pub seed: u64,
    pub rates: RatesMode,
    /// Loop count of the constructed model.
    pub loops: usize,
    /// Probe step for coefficient extraction.
    pub delta: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Multiplier on all task noise scales; zero gives noiseless tasks.
    pub noise_scale: f64,
    pub bounds: ClipBounds,
    pub estimators: Vec<EstimatorKind>,
    /// Report standard deviations instead of standard errors.
    pub stddev: bool,
    pub out: Option<std::path::PathBuf>,
    pub svg: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            label: "standard".into(),
            scenario: ScenarioVariant::Standard,
            sweep: SweepAxis::N(vec![20, 30, 40, 50]),
            p: 5,
            q: 10,
            n: 50,
            sims: 200,
            seed: 1,
            rates: RatesMode::Safe,
            loops: 60,
            delta: 5.0,
            lambda: 0.0,
            tau: 0.0,
            noise_scale: 1.0,
            bounds: ClipBounds::default(),
            estimators: vec![EstimatorKind::Ols, EstimatorKind::TwoSls, EstimatorKind::Tf],
            stddev: false,
            out: None,
            svg: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.p == 0 || self.q == 0 || self.n == 0 {
            return err(format!("dimensions must be positive, got p={} q={} n={}", self.p, self.q, self.n));
        }
        if self.sims == 0 {
            return err("sims must be at least 1".into());
        }
        if self.sweep.is_empty() {
            return err("sweep grid is empty".into());
        }
        if self.loops == 0 {
            return err("loop count must be at least 1".into());
        }
        if !self.delta.is_finite() || self.delta == 0.0 {
            return err(format!("extraction step must be finite and nonzero, got {}", self.delta));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return err(format!("noise scale must be finite and nonnegative, got {}", self.noise_scale));
        }
        for (name, v) in [("lambda", self.lambda), ("tau", self.tau)] {
            if !(v >= 0.0) || !v.is_finite() {
                return err(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if self.estimators.is_empty() {
            return err("at least one estimator is required".into());
        }
        if let SweepAxis::UnderId(grid) = &self.sweep {
            if grid.iter().any(|&q_eff| q_eff == 0 || q_eff > self.q) {
                return err(format!("under-identified grid must lie in 1..={}", self.q));
            }
        }
        self.bounds.validate()?;
        Ok(())
    }
}

/// Aggregated metrics for one (sweep point, estimator) cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRecord {
    pub scenario: String,
    pub sweep_value: f64,
    pub estimator: EstimatorKind,
    pub icpe_mean: f64,
    pub icpe_stderr: f64,
    pub coef_mse_mean: f64,
    pub coef_mse_stderr: f64,
    /// Simulations dropped from the means because an estimator failed.
    pub diverged: usize,
    pub sims: usize,
}

/// Per-simulation metrics for one estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimOutcome {
    /// Squared prediction error on the query sample.
    pub icpe: f64,
    /// Squared distance between the (clipped) estimate and the true
    /// coefficient.
    pub coef_mse: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    /// Worker-pool execution; falls back to sequential without the
    /// `parallel` feature.
    Parallel,
}

fn default_mode() -> ExecMode {
    if cfg!(feature = "parallel") {
        ExecMode::Parallel
    } else {
        ExecMode::Sequential
    }
}

#[cfg(feature = "parallel")]
fn map_sims<T, F>(mode: ExecMode, sims: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..sims).map(f).collect(),
        ExecMode::Parallel => (0..sims).into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn map_sims<T, F>(_mode: ExecMode, sims: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..sims).map(f).collect()
}

fn scaled_task(cfg: &ExperimentConfig, rng: &mut RngStream) -> TaskParams {
    let mut task = sample_task(cfg.p, cfg.q, rng);
    let s = cfg.noise_scale;
    if s != 1.0 {
        task.cov_u = task.cov_u.scale(s * s);
        task.cov_omega = task.cov_omega.scale(s * s);
        task.noise_y *= s;
    }
    task
}

/// Draws the task and prompt for simulation index `k` exactly as the
/// sweeps do: stream `(seed, k)`, task first, prompt second.
pub fn draw_sim(
    cfg: &ExperimentConfig,
    variant: &ScenarioVariant,
    n: usize,
    k: usize,
) -> Result<(TaskParams, Dataset)> {
    let mut rng = RngStream::new(cfg.seed, k as u64);
    let task = scaled_task(cfg, &mut rng);
    let (data, _) = generate_prompt(&task, n, &cfg.bounds, variant, &mut rng)?;
    Ok((task, data))
}

/// The constructed-model predictor used in sweeps: resolve rates, derive
/// mask bounds from a reference run over the same horizon, build the block,
/// embed, loop, read out. Returns the query prediction and the extracted
/// coefficients (one baseline forward plus one per component).
pub fn tf_estimate(data: &Dataset, cfg: &ExperimentConfig) -> Result<(f64, Vec<f64>)> {
    let predictor = |d: &Dataset| -> Result<f64> {
        let rates = cfg.rates.resolve(d)?;
        let (r, rp) = compute_mask_bounds(d, &rates, cfg.loops)?;
        let block = if cfg.lambda == 0.0 && cfg.tau == 0.0 {
            build_block(d.p(), d.q(), d.n(), rates, r, rp)
        } else {
            build_ridge_block(d.p(), d.q(), d.n(), rates, r, rp, cfg.lambda, cfg.tau)
        };
        let model = LoopedModel::new(block, cfg.loops)?;
        let prompt = embed(d, &GDState::zero(d.p(), d.q()))?;
        Ok(read_y(&model.forward(&prompt)?))
    };
    let yhat = predictor(data)?;
    let beta = extract_coefficients(predictor, data, cfg.delta)?;
    Ok((yhat, beta))
}

/// Runs one estimator on one prompt and scores it against the true
/// coefficient. Coefficient error uses the clipped estimate; the prediction
/// does not clip.
pub fn evaluate_estimator(
    est: EstimatorKind,
    data: &Dataset,
    task: &TaskParams,
    cfg: &ExperimentConfig,
) -> Result<SimOutcome> {
    let (yhat, beta_hat) = match est {
        EstimatorKind::Ols => {
            let fit = ols(data)?;
            (fit.predict(&data.x_query), fit.beta_hat)
        }
        EstimatorKind::TwoSls => {
            let fit = two_sls(data)?;
            (fit.predict(&data.x_query), fit.beta_hat)
        }
        EstimatorKind::RidgeTwoSls => {
            let fit = ridge_two_sls(data, cfg.lambda, cfg.tau)?;
            (fit.predict(&data.x_query), fit.beta_hat)
        }
        EstimatorKind::Tf => tf_estimate(data, cfg)?,
    };
    let clipped = clipped_beta(&beta_hat, &cfg.bounds);
    let icpe = (yhat - data.y_query).powi(2);
    let coef_mse = clipped
        .iter()
        .zip(&task.beta)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(SimOutcome { icpe, coef_mse })
}

fn simulate(
    cfg: &ExperimentConfig,
    variant: &ScenarioVariant,
    n: usize,
    k: usize,
) -> Vec<Option<SimOutcome>> {
    match draw_sim(cfg, variant, n, k) {
        Ok((task, data)) => cfg
            .estimators
            .iter()
            .map(|est| evaluate_estimator(*est, &data, &task, cfg).ok())
            .collect(),
        Err(_) => vec![None; cfg.estimators.len()],
    }
}

fn mean_and_dispersion(values: &[f64], stddev: bool) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m as f64 - 1.0);
    let sd = var.sqrt();
    (mean, if stddev { sd } else { sd / (m as f64).sqrt() })
}

/// Runs the experiment with the default execution mode (parallel when the
/// feature is enabled).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricRecord>> {
    run_experiment_mode(cfg, default_mode())
}

/// Runs the experiment under an explicit execution mode. Output is
/// identical across modes and worker counts.
pub fn run_experiment_mode(cfg: &ExperimentConfig, mode: ExecMode) -> Result<Vec<MetricRecord>> {
    cfg.validate()?;
    let mut records = Vec::new();
    for (sweep_value, variant, n) in cfg.sweep.points(&cfg.scenario, cfg.n) {
        let outcomes = map_sims(mode, cfg.sims, |k| simulate(cfg, &variant, n, k));
        for (ei, est) in cfg.estimators.iter().enumerate() {
            let icpe: Vec<f64> = outcomes
                .iter()
                .filter_map(|row| row[ei].map(|o| o.icpe))
                .collect();
            let coef: Vec<f64> = outcomes
                .iter()
                .filter_map(|row| row[ei].map(|o| o.coef_mse))
                .collect();
            let (icpe_mean, icpe_stderr) = mean_and_dispersion(&icpe, cfg.stddev);
            let (coef_mse_mean, coef_mse_stderr) = mean_and_dispersion(&coef, cfg.stddev);
            records.push(MetricRecord {
                scenario: cfg.label.clone(),
                sweep_value,
                estimator: *est,
                icpe_mean,
                icpe_stderr,
                coef_mse_mean,
                coef_mse_stderr,
                diverged: cfg.sims - icpe.len(),
                sims: cfg.sims,
            });
        }
    }
    Ok(records)
}

/// Mean squared prediction error of `predictor` over the query samples of
/// `prompts`.
pub fn icl_loss_empirical<F>(mut predictor: F, prompts: &[Dataset]) -> Result<f64>
where
    F: FnMut(&Dataset) -> Result<f64>,
{
    if prompts.is_empty() {
        return Err(Error::InvalidArgument("empty prompt set".into()));
    }
    let mut total = 0.0;
    for data in prompts {
        let err = predictor(data)? - data.y_query;
        total += err * err;
    }
    Ok(total / prompts.len() as f64)
}

/// One row of a convergence report.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConvergenceRow {
    pub t: usize,
    pub dist_beta: f64,
    pub dist_theta: f64,
    pub lambda_pow: f64,
}

/// Distances of the recursion to the closed-form solution per step, with
/// the certified geometric envelope alongside. When the recursion diverges
/// the rows cover the steps before the blow-up and `diverged_at` names the
/// offending step.
#[derive(Clone, Debug)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub contraction: ContractionReport,
    pub diverged_at: Option<usize>,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> Result<String> {
        io::convergence_to_csv(self)
    }
}

/// Runs the recursion for `steps` updates and reports per-step distances.
pub fn convergence_report(
    data: &Dataset,
    rates: &LearningRates,
    steps: usize,
) -> Result<ConvergenceReport> {
    let (traj, diverged_at) = match run_gd(data, rates, steps, None) {
        Ok(traj) => (traj, None),
        Err(Error::Diverged { step, .. }) => {
            let prefix = run_gd(data, rates, step.saturating_sub(1), None)?;
            (prefix, Some(step))
        }
        Err(e) => return Err(e),
    };
    let rows = traj
        .dist_beta
        .iter()
        .zip(&traj.dist_theta)
        .enumerate()
        .map(|(t, (&db, &dt))| ConvergenceRow {
            t,
            dist_beta: db,
            dist_theta: dt,
            lambda_pow: traj.lambda_pow(t),
        })
        .collect();
    Ok(ConvergenceReport { rows, contraction: traj.contraction, diverged_at })
}
