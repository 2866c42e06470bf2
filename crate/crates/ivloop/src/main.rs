use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use ivloop::datagen::{generate_prompt, sample_task, ClipBounds, Dataset, ScenarioVariant};
use ivloop::error::{Error, Result};
use ivloop::estimators::{clipped_beta, mse_bound, ols, ridge_two_sls, two_sls};
use ivloop::harness::{
    convergence_report, convergence_svg, draw_sim, export_csv, ingest_csv, metrics_to_csv,
    run_experiment_mode, sweep_svg, tf_estimate, EstimatorKind, ExecMode, ExperimentConfig,
    RatesMode, SweepAxis,
};
use ivloop::numerics::RngStream;

#[derive(Parser)]
#[command(
    name = "ivloop",
    version,
    about = "Instrumental-variable regression via closed forms, a coupled gradient solver, \
             and a constructed looped attention model, with Monte Carlo sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
struct CommonArgs {
    /// Treatment dimension.
    #[arg(long)]
    p: Option<usize>,
    /// Instrument dimension.
    #[arg(long)]
    q: Option<usize>,
    /// Training samples per prompt.
    #[arg(long)]
    n: Option<usize>,
    /// Simulations per sweep point.
    #[arg(long)]
    sims: Option<usize>,
    /// Base seed; simulation k draws from stream (seed, k).
    #[arg(long)]
    seed: Option<u64>,
    /// Learning rates: "safe", "optimal", or explicit "a=0.001,e=0.02".
    #[arg(long)]
    rates: Option<String>,
    /// Loop count of the constructed model (and steps for `convergence`).
    #[arg(long)]
    loops: Option<usize>,
    /// Probe step for coefficient extraction.
    #[arg(long)]
    delta: Option<f64>,
    /// Coefficient ridge penalty (selects the ridge solver when nonzero).
    #[arg(long)]
    lambda: Option<f64>,
    /// First-stage ridge penalty.
    #[arg(long)]
    tau: Option<f64>,
    /// Output CSV path; omit to print CSV to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an SVG plot next to --out.
    #[arg(long)]
    svg: bool,
    /// Shorthand for --sims 500.
    #[arg(long = "sims-500")]
    sims_500: bool,
    /// Report standard deviations in place of standard errors.
    #[arg(long)]
    stddev: bool,
    /// JSON experiment config; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run simulations on a single worker.
    #[arg(long)]
    sequential: bool,
    /// Estimators to run (comma-separated: ols, 2sls, ridge-2sls, tf).
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-step distances of the gradient recursion to the two-stage
    /// solution on one generated prompt.
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Error of each estimator as the prompt length grows.
    SweepN {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
    },
    /// Error as the instrument-to-treatment signal is scaled.
    SweepIvStrength {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated strength multipliers.
        #[arg(long, value_delimiter = ',')]
        strength_grid: Option<Vec<f64>>,
    },
    /// Sample-size sweep with a quadratic instrument-to-treatment map.
    Quadratic {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
    },
    /// Sweep over the number of instruments carrying signal.
    Underid {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated effective instrument counts.
        #[arg(long, value_delimiter = ',')]
        q_eff_grid: Option<Vec<usize>>,
    },
    /// Sample-size sweep with near-duplicate treatment and instrument
    /// columns.
    Multicollinearity {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
        /// Duplicate two columns of each kind with tighter jitter.
        #[arg(long)]
        heavy: bool,
    },
    /// Sample-size sweep with a random ReLU network first stage.
    Nonlinear {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
        /// Hidden width of the first-stage network.
        #[arg(long, default_value_t = 8)]
        hidden: usize,
    },
    /// Sweep over the strength of the unobserved confounder.
    Endogeneity {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        strength_grid: Option<Vec<f64>>,
    },
    /// Empirical clipped-estimator error against the finite-sample envelope.
    BoundCheck {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
        /// Norm bound on instrument samples (default 2 sqrt(q)).
        #[arg(long)]
        bound_z: Option<f64>,
        /// Norm bound on the clipped estimate (default 2 sqrt(p)).
        #[arg(long)]
        bound_beta: Option<f64>,
        /// Norm bound on the first-stage noise (default 2 sqrt(p)).
        #[arg(long)]
        eps2_bound: Option<f64>,
        /// Absolute constant in the concentration terms.
        #[arg(long, default_value_t = 1.0)]
        c_const: f64,
    },
    /// Fit one estimator to a prompt read from CSV and predict the query.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        input: PathBuf,
        /// Instrument columns (default: header names starting with "z").
        #[arg(long, value_delimiter = ',')]
        z_cols: Option<Vec<String>>,
        /// Treatment columns (default: header names starting with "x").
        #[arg(long, value_delimiter = ',')]
        x_cols: Option<Vec<String>>,
        /// Outcome column.
        #[arg(long, default_value = "y")]
        y_col: String,
        /// 1-based data row holding the query (default: last row).
        #[arg(long)]
        query_row: Option<usize>,
        /// One of: ols, 2sls, ridge-2sls, tf.
        #[arg(long, default_value = "2sls")]
        estimator: String,
    },
    /// Recover coefficients from the constructed model by probing the
    /// query treatment, next to the closed-form fit.
    Extract {
        #[command(flatten)]
        common: CommonArgs,
        /// Prompt CSV; omitted means one generated prompt.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        z_cols: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        x_cols: Option<Vec<String>>,
        #[arg(long, default_value = "y")]
        y_col: String,
        #[arg(long)]
        query_row: Option<usize>,
    },
    /// Generate one prompt and write it as CSV (query row last).
    GenPrompt {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn parse_rates(s: &str) -> Result<RatesMode> {
    match s {
        "safe" => return Ok(RatesMode::Safe),
        "optimal" => return Ok(RatesMode::Optimal),
        _ => {}
    }
    let mut alpha = None;
    let mut eta = None;
    for part in s.split(',') {
        let (key, value) = part.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "bad rates '{s}': expected safe, optimal, or a=VALUE,e=VALUE"
            ))
        })?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad rate value '{value}'")))?;
        match key.trim() {
            "a" | "alpha" => alpha = Some(v),
            "e" | "eta" => eta = Some(v),
            other => return Err(Error::Config(format!("unknown rate key '{other}'"))),
        }
    }
    match (alpha, eta) {
        (Some(alpha), Some(eta)) => Ok(RatesMode::Explicit { alpha, eta }),
        _ => Err(Error::Config(format!(
            "bad rates '{s}': explicit rates need both a= and e="
        ))),
    }
}

fn build_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(p) = common.p {
        cfg.p = p;
    }
    if let Some(q) = common.q {
        cfg.q = q;
    }
    if let Some(n) = common.n {
        cfg.n = n;
    }
    if common.sims_500 {
        cfg.sims = 500;
    }
    if let Some(sims) = common.sims {
        cfg.sims = sims;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(rates) = &common.rates {
        cfg.rates = parse_rates(rates)?;
    }
    if let Some(loops) = common.loops {
        cfg.loops = loops;
    }
    if let Some(delta) = common.delta {
        cfg.delta = delta;
    }
    if let Some(lambda) = common.lambda {
        cfg.lambda = lambda;
    }
    if let Some(tau) = common.tau {
        cfg.tau = tau;
    }
    if let Some(est) = &common.estimators {
        cfg.estimators = est
            .iter()
            .map(|s| EstimatorKind::from_label(s))
            .collect::<Result<_>>()?;
    }
    if common.stddev {
        cfg.stddev = true;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if common.svg {
        cfg.svg = true;
    }
    Ok(cfg)
}

fn exec_mode(common: &CommonArgs) -> ExecMode {
    if common.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    }
}

/// Writes the CSV to --out or stdout; the SVG, when requested, lands next
/// to the CSV and is rendered from the same records.
fn emit<F: FnOnce() -> String>(cfg: &ExperimentConfig, csv: &str, svg: Option<F>) -> Result<()> {
    match &cfg.out {
        Some(path) => {
            fs::write(path, csv)?;
            eprintln!("wrote {}", path.display());
            if cfg.svg {
                match svg {
                    Some(render) => {
                        let svg_path = path.with_extension("svg");
                        fs::write(&svg_path, render())?;
                        eprintln!("wrote {}", svg_path.display());
                    }
                    None => eprintln!("note: this command has no plot; --svg ignored"),
                }
            }
        }
        None => {
            if cfg.svg {
                return Err(Error::Config("--svg needs --out to name the plot".into()));
            }
            print!("{csv}");
        }
    }
    Ok(())
}

const NO_PLOT: Option<fn() -> String> = None;

fn run_sweep(cfg: &ExperimentConfig, mode: ExecMode) -> Result<()> {
    let points = match &cfg.sweep {
        SweepAxis::N(g) => g.len(),
        SweepAxis::IvStrength(g) => g.len(),
        SweepAxis::Endogeneity(g) => g.len(),
        SweepAxis::UnderId(g) => g.len(),
    };
    eprintln!(
        "{}: {points} sweep points x {} sims, p={} q={} seed={}",
        cfg.label, cfg.sims, cfg.p, cfg.q, cfg.seed
    );
    let records = run_experiment_mode(cfg, mode)?;
    for rec in &records {
        if rec.diverged > 0 {
            eprintln!(
                "note: {}/{} simulations diverged for {} at sweep value {}",
                rec.diverged,
                rec.sims,
                rec.estimator.label(),
                rec.sweep_value
            );
        }
    }
    emit(cfg, &metrics_to_csv(&records)?, Some(|| sweep_svg(&records)))
}

fn infer_columns(path: &Path, prefix: &str) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or("");
    let cols: Vec<String> = header
        .split(',')
        .map(str::trim)
        .filter(|h| h.starts_with(prefix) && h[prefix.len()..].chars().all(|c| c.is_ascii_digit()))
        .map(String::from)
        .collect();
    if cols.is_empty() {
        return Err(Error::CsvParse {
            row: 0,
            col: format!("{prefix}*"),
            msg: format!("no '{prefix}<index>' columns in header; pass --{prefix}-cols"),
        });
    }
    Ok(cols)
}

fn load_prompt(
    input: &Path,
    z_cols: &Option<Vec<String>>,
    x_cols: &Option<Vec<String>>,
    y_col: &str,
    query_row: Option<usize>,
) -> Result<Dataset> {
    let z = match z_cols {
        Some(cols) => cols.clone(),
        None => infer_columns(input, "z")?,
    };
    let x = match x_cols {
        Some(cols) => cols.clone(),
        None => infer_columns(input, "x")?,
    };
    ingest_csv(input, &z, &x, y_col, query_row)
}

fn run_fit(
    common: &CommonArgs,
    input: &Path,
    z_cols: &Option<Vec<String>>,
    x_cols: &Option<Vec<String>>,
    y_col: &str,
    query_row: Option<usize>,
    estimator: &str,
) -> Result<()> {
    let cfg = build_config(common)?;
    cfg.validate()?;
    let est = EstimatorKind::from_label(estimator)?;
    let data = load_prompt(input, z_cols, x_cols, y_col, query_row)?;
    eprintln!(
        "fitting {} to {} ({} samples, p={}, q={})",
        est.label(),
        input.display(),
        data.n(),
        data.p(),
        data.q()
    );
    let (prediction, beta) = match est {
        EstimatorKind::Ols => {
            let fit = ols(&data)?;
            (fit.predict(&data.x_query), fit.beta_hat)
        }
        EstimatorKind::TwoSls => {
            let fit = two_sls(&data)?;
            (fit.predict(&data.x_query), fit.beta_hat)
        }
        EstimatorKind::RidgeTwoSls => {
            let fit = ridge_two_sls(&data, cfg.lambda, cfg.tau)?;
            (fit.predict(&data.x_query), fit.beta_hat)
        }
        EstimatorKind::Tf => tf_estimate(&data, &cfg)?,
    };
    let mut csv = String::from("field,value\n");
    csv.push_str(&format!("estimator,{}\n", est.label()));
    csv.push_str(&format!("prediction,{prediction}\n"));
    for (k, b) in beta.iter().enumerate() {
        csv.push_str(&format!("beta{k},{b}\n"));
    }
    emit(&cfg, &csv, NO_PLOT)
}

fn run_extract(
    common: &CommonArgs,
    input: &Option<PathBuf>,
    z_cols: &Option<Vec<String>>,
    x_cols: &Option<Vec<String>>,
    y_col: &str,
    query_row: Option<usize>,
) -> Result<()> {
    let cfg = build_config(common)?;
    cfg.validate()?;
    let data = match input {
        Some(path) => load_prompt(path, z_cols, x_cols, y_col, query_row)?,
        None => {
            eprintln!(
                "generating one prompt: p={} q={} n={} seed={}",
                cfg.p, cfg.q, cfg.n, cfg.seed
            );
            draw_sim(&cfg, &cfg.scenario, cfg.n, 0)?.1
        }
    };
    let (_, beta_tf) = tf_estimate(&data, &cfg)?;
    let reference = two_sls(&data)?.beta_hat;
    let mut csv = String::from("k,tf,2sls\n");
    let mut worst: f64 = 0.0;
    for (k, (a, b)) in beta_tf.iter().zip(&reference).enumerate() {
        worst = worst.max((a - b).abs());
        csv.push_str(&format!("{k},{a},{b}\n"));
    }
    eprintln!(
        "extracted {} coefficients with {} loops; max |tf - 2sls| = {worst:.3e}",
        beta_tf.len(),
        cfg.loops
    );
    emit(&cfg, &csv, NO_PLOT)
}

fn run_bound_check(
    common: &CommonArgs,
    n_grid: &Option<Vec<usize>>,
    bound_z: Option<f64>,
    bound_beta: Option<f64>,
    eps2_bound: Option<f64>,
    c_const: f64,
) -> Result<()> {
    let mut cfg = build_config(common)?;
    if common.sims.is_none() && !common.sims_500 && common.config.is_none() {
        cfg.sims = 32;
    }
    let grid = n_grid.clone().unwrap_or_else(|| vec![80_000, 140_000, 200_000]);
    let b_z = bound_z.unwrap_or(2.0 * (cfg.q as f64).sqrt());
    let b_beta = bound_beta.unwrap_or(2.0 * (cfg.p as f64).sqrt());
    let b_eps2 = eps2_bound.unwrap_or(2.0 * (cfg.p as f64).sqrt());
    cfg.bounds = ClipBounds { z: b_z, beta: b_beta, ..cfg.bounds };
    cfg.sweep = SweepAxis::N(grid.clone());
    cfg.estimators = vec![EstimatorKind::TwoSls];
    cfg.label = "bound-check".into();
    cfg.validate()?;
    eprintln!(
        "bound check: n in {grid:?}, {} sims, B_z={b_z:.3} B_beta={b_beta:.3} B_eps2={b_eps2:.3} C={c_const}",
        cfg.sims
    );

    // The envelope constants depend on the task, so one task (stream
    // (seed, 0)) is held fixed and only the prompts are redrawn.
    let task = sample_task(cfg.p, cfg.q, &mut RngStream::new(cfg.seed, 0));
    let mut csv = String::from("n,empirical_mse,empirical_stderr,bound,c_n,c_n_limit,n_min\n");
    for &n in &grid {
        let mut errs = Vec::with_capacity(cfg.sims);
        for k in 0..cfg.sims {
            let mut rng = RngStream::new(cfg.seed, k as u64 + 1);
            let (data, _) = generate_prompt(&task, n, &cfg.bounds, &cfg.scenario, &mut rng)?;
            let fit = two_sls(&data)?;
            let clipped = clipped_beta(&fit.beta_hat, &cfg.bounds);
            errs.push(
                clipped
                    .iter()
                    .zip(&task.beta)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>(),
            );
        }
        let m = errs.len() as f64;
        let mean = errs.iter().sum::<f64>() / m;
        let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (m - 1.0);
        let stderr = (var / m).sqrt();
        match mse_bound(&task, &cfg.bounds, b_eps2, None, c_const, n) {
            Ok(report) => {
                csv.push_str(&format!(
                    "{n},{mean},{stderr},{},{},{},{}\n",
                    report.mse_bound,
                    report.c_n,
                    report.c_n_limit(),
                    report.n_min
                ));
            }
            Err(Error::ThresholdNotMet { n_min, .. }) => {
                eprintln!("note: n={n} is below the envelope threshold n_min={n_min}");
                csv.push_str(&format!("{n},{mean},{stderr},,,,{n_min}\n"));
            }
            Err(e) => return Err(e),
        }
    }
    emit(&cfg, &csv, NO_PLOT)
}

fn run_convergence(common: &CommonArgs) -> Result<()> {
    let cfg = build_config(common)?;
    cfg.validate()?;
    let (_, data) = draw_sim(&cfg, &cfg.scenario, cfg.n, 0)?;
    let rates = cfg.rates.resolve(&data)?;
    eprintln!(
        "convergence: p={} q={} n={} seed={} alpha={:.4e} eta={:.4e}",
        cfg.p, cfg.q, cfg.n, cfg.seed, rates.alpha, rates.eta
    );
    let report = convergence_report(&data, &rates, cfg.loops)?;
    eprintln!(
        "contraction: gamma={:.4} kappa={:.4} lambda={:.4}",
        report.contraction.gamma, report.contraction.kappa, report.contraction.lambda
    );
    if let Some(step) = report.diverged_at {
        eprintln!("note: recursion diverged at step {step}");
    }
    emit(&cfg, &report.to_csv()?, Some(|| convergence_svg(&report)))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Convergence { common } => run_convergence(common),
        Command::SweepN { common, n_grid } => {
            let mut cfg = build_config(common)?;
            cfg.label = "sweep-n".into();
            cfg.sweep = SweepAxis::N(n_grid.clone().unwrap_or_else(|| vec![20, 30, 40, 50]));
            run_sweep(&cfg, exec_mode(common))
        }
        Command::SweepIvStrength { common, strength_grid } => {
            let mut cfg = build_config(common)?;
            cfg.label = "sweep-iv-strength".into();
            cfg.sweep = SweepAxis::IvStrength(
                strength_grid
                    .clone()
                    .unwrap_or_else(|| vec![0.1, 0.25, 0.5, 1.0, 1.5, 2.0]),
            );
            run_sweep(&cfg, exec_mode(common))
        }
        Command::Quadratic { common, n_grid } => {
            let mut cfg = build_config(common)?;
            cfg.label = "quadratic".into();
            cfg.scenario = ScenarioVariant::QuadraticIv;
            cfg.sweep = SweepAxis::N(n_grid.clone().unwrap_or_else(|| vec![20, 30, 40, 50]));
            run_sweep(&cfg, exec_mode(common))
        }
        Command::Underid { common, q_eff_grid } => {
            let mut cfg = build_config(common)?;
            cfg.label = "underid".into();
            let grid = q_eff_grid
                .clone()
                .unwrap_or_else(|| (1..=cfg.q.min(5)).collect());
            for &q_eff in &grid {
                if q_eff < cfg.p {
                    eprintln!(
                        "note: q_eff={q_eff} < p={}: first stage is rank deficient; \
                         instrumented estimators report the minimum-norm solution",
                        cfg.p
                    );
                }
            }
            cfg.sweep = SweepAxis::UnderId(grid);
            run_sweep(&cfg, exec_mode(common))
        }
        Command::Multicollinearity { common, n_grid, heavy } => {
            let mut cfg = build_config(common)?;
            cfg.label = if *heavy {
                "multicollinearity-heavy".into()
            } else {
                "multicollinearity".into()
            };
            let (dup_x, dup_z, jitter) =
                if *heavy { (2, 2, 1e-10) } else { (1, 1, 1e-4) };
            if dup_x >= cfg.p || dup_z >= cfg.q {
                return Err(Error::Config(format!(
                    "duplicating {dup_x} treatment and {dup_z} instrument columns needs p > \
                     {dup_x} and q > {dup_z}, got p={} q={}",
                    cfg.p, cfg.q
                )));
            }
            cfg.scenario = ScenarioVariant::Multicollinearity { dup_x, dup_z, jitter };
            cfg.sweep = SweepAxis::N(n_grid.clone().unwrap_or_else(|| vec![20, 30, 40, 50]));
            run_sweep(&cfg, exec_mode(common))
        }
        Command::Nonlinear { common, n_grid, hidden } => {
            let mut cfg = build_config(common)?;
            cfg.label = "nonlinear".into();
            cfg.scenario = ScenarioVariant::NonlinearMlp { hidden: *hidden };
            cfg.sweep = SweepAxis::N(n_grid.clone().unwrap_or_else(|| vec![20, 30, 40, 50]));
            run_sweep(&cfg, exec_mode(common))
        }
        Command::Endogeneity { common, strength_grid } => {
            let mut cfg = build_config(common)?;
            cfg.label = "endogeneity".into();
            cfg.sweep = SweepAxis::Endogeneity(
                strength_grid
                    .clone()
                    .unwrap_or_else(|| vec![0.0, 0.5, 1.0, 1.5, 2.0]),
            );
            run_sweep(&cfg, exec_mode(common))
        }
        Command::BoundCheck { common, n_grid, bound_z, bound_beta, eps2_bound, c_const } => {
            run_bound_check(common, n_grid, *bound_z, *bound_beta, *eps2_bound, *c_const)
        }
        Command::Fit { common, input, z_cols, x_cols, y_col, query_row, estimator } => {
            run_fit(common, input, z_cols, x_cols, y_col, *query_row, estimator)
        }
        Command::Extract { common, input, z_cols, x_cols, y_col, query_row } => {
            run_extract(common, input, z_cols, x_cols, y_col, *query_row)
        }
        Command::GenPrompt { common } => {
            let cfg = build_config(common)?;
            cfg.validate()?;
            let (_, data) = draw_sim(&cfg, &cfg.scenario, cfg.n, 0)?;
            eprintln!(
                "generated prompt: p={} q={} n={} seed={}",
                cfg.p, cfg.q, cfg.n, cfg.seed
            );
            emit(&cfg, &export_csv(&data), NO_PLOT)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
