//! Synthetic endogenous-regression tasks and prompt generation.
//!
//! A task fixes the structural parameters of the model
//!
//! ```text
//! x = theta^T z + confound_x^T u + omega        (treatment equation)
//! y = beta^T x + confound_y . u + eps           (outcome equation)
//! ```
//!
//! where `z` is the instrument, `u` is the shared confounding noise that
//! makes `x` endogenous, and `omega`, `eps` are exogenous disturbances. A
//! prompt is `n` labelled draws plus one query draw; the query is generated
//! *without* the confounder, so its outcome depends on the regressors only
//! through the causal coefficient `beta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, GaussianSampler, Matrix, RngStream};

/// Structural parameters of one regression task.
#[derive(Clone, Debug)]
pub struct TaskParams {
    /// Instrument-to-treatment coefficient, `q x p`.
    pub theta: Matrix,
    /// Causal coefficient of the outcome equation, length `p`.
    pub beta: Vec<f64>,
    /// Loading of the confounder onto the treatment, `p x p`.
    pub confound_x: Matrix,
    /// Loading of the confounder onto the outcome, length `p`.
    pub confound_y: Vec<f64>,
    /// Covariance of the instrument, `q x q`.
    pub cov_z: Matrix,
    /// Covariance of the confounder, `p x p`.
    pub cov_u: Matrix,
    /// Covariance of the exogenous treatment noise, `p x p`.
    pub cov_omega: Matrix,
    /// Standard deviation of the exogenous outcome noise.
    pub noise_y: f64,
}

impl TaskParams {
    pub fn p(&self) -> usize {
        self.theta.cols()
    }

    pub fn q(&self) -> usize {
        self.theta.rows()
    }
}

/// Norm bounds applied to generated samples (and to estimated coefficients
/// via [`crate::estimators::clipped_beta`]). `f64::INFINITY` disables a
/// bound; in JSON an absent or `null` bound means the same.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipBounds {
    #[serde(with = "optional_bound")]
    pub z: f64,
    #[serde(with = "optional_bound")]
    pub x: f64,
    #[serde(with = "optional_bound")]
    pub y: f64,
    #[serde(with = "optional_bound")]
    pub beta: f64,
}

mod optional_bound {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for ClipBounds {
    fn default() -> Self {
        ClipBounds {
            z: f64::INFINITY,
            x: f64::INFINITY,
            y: f64::INFINITY,
            beta: f64::INFINITY,
        }
    }
}

impl ClipBounds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("z", self.z), ("x", self.x), ("y", self.y), ("beta", self.beta)] {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "clip bound {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Rescales `v` onto the ball of radius `bound` if it lies outside.
pub fn clip(v: &[f64], bound: f64) -> Vec<f64> {
    let n = norm(v);
    if n > bound {
        let s = bound / n;
        v.iter().map(|x| x * s).collect()
    } else {
        v.to_vec()
    }
}

/// Scalar counterpart of [`clip`].
pub fn clip_scalar(v: f64, bound: f64) -> f64 {
    if v.abs() > bound {
        bound * v.signum()
    } else {
        v
    }
}

/// One generated prompt: `n` labelled samples plus a query sample.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// Instruments, `n x q`.
    pub z: Matrix,
    /// Treatments, `n x p`.
    pub x: Matrix,
    /// Outcomes, length `n`.
    pub y: Vec<f64>,
    pub z_query: Vec<f64>,
    pub x_query: Vec<f64>,
    /// Ground-truth query outcome, used only for evaluation.
    pub y_query: f64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.z.rows()
    }

    pub fn q(&self) -> usize {
        self.z.cols()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    /// Outcomes as an `n x 1` matrix.
    pub fn y_col(&self) -> Matrix {
        Matrix::from_vec(self.y.len(), 1, self.y.clone()).expect("y finite")
    }
}

/// Raw noise draws behind a [`Dataset`], retained for diagnostics. The query
/// row has no confounder draw by construction, which is what makes the query
/// outcome depend on `x` only through `beta`.
#[derive(Clone, Debug)]
pub struct GenerationTrace {
    /// Confounder draws actually applied to the training rows, `n x p`.
    pub u: Matrix,
    /// Exogenous treatment noise, `(n+1) x p`; last row is the query.
    pub omega: Matrix,
    /// Exogenous outcome noise, length `n+1`; last entry is the query.
    pub eps: Vec<f64>,
}

/// Structural deviations from the baseline generating process, applied
/// before clipping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioVariant {
    Standard,
    /// Scales the instrument-to-treatment coefficient by `r`.
    IvStrength(f64),
    /// Treatment responds to the element-wise square of the instrument.
    QuadraticIv,
    /// Zeroes instrument dimensions `q_eff..` so only `q_eff` instruments
    /// carry signal.
    UnderIdentified { q_eff: usize },
    /// Appends near-duplicate treatment and instrument columns
    /// (`new = 2 * old + N(0, jitter)`).
    Multicollinearity { dup_x: usize, dup_z: usize, jitter: f64 },
    /// Treatment responds to the instrument through a random two-layer ReLU
    /// network instead of a linear map.
    NonlinearMlp { hidden: usize },
    /// Scales the confounder draws by `r`.
    EndogeneityStrength(f64),
}

/// Draws a task with standard-normal structural coefficients, identity
/// covariances, and unit outcome noise.
pub fn sample_task(p: usize, q: usize, rng: &mut RngStream) -> TaskParams {
    fn fill(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            rng.fill_standard_normal(m.row_mut(i));
        }
        m
    }
    let theta = fill(q, p, rng);
    let mut beta = vec![0.0; p];
    rng.fill_standard_normal(&mut beta);
    let confound_x = fill(p, p, rng);
    let mut confound_y = vec![0.0; p];
    rng.fill_standard_normal(&mut confound_y);
    TaskParams {
        theta,
        beta,
        confound_x,
        confound_y,
        cov_z: Matrix::identity(q),
        cov_u: Matrix::identity(p),
        cov_omega: Matrix::identity(p),
        noise_y: 1.0,
    }
}

struct Samplers {
    z: GaussianSampler,
    u: GaussianSampler,
    omega: GaussianSampler,
}

impl Samplers {
    fn new(task: &TaskParams) -> Result<Self> {
        Ok(Samplers {
            z: GaussianSampler::new(&task.cov_z)?,
            u: GaussianSampler::new(&task.cov_u)?,
            omega: GaussianSampler::new(&task.cov_omega)?,
        })
    }
}

/// Generates one prompt from `task` under `variant`.
///
/// Draw order is fixed (per training row: `z`, `u`, `omega`, `eps`; then the
/// query's `z`, `omega`, `eps`; then any variant-specific draws), so a given
/// `(task, n, bounds, variant, rng)` tuple fully determines the output.
pub fn generate_prompt(
    task: &TaskParams,
    n: usize,
    bounds: &ClipBounds,
    variant: &ScenarioVariant,
    rng: &mut RngStream,
) -> Result<(Dataset, GenerationTrace)> {
    bounds.validate()?;
    if let ScenarioVariant::Multicollinearity { dup_x, dup_z, jitter } = variant {
        return generate_multicollinear(task, n, bounds, *dup_x, *dup_z, *jitter, rng);
    }

    let p = task.p();
    let q = task.q();

    // Variant-specific structure is drawn first so the per-row stream layout
    // is shared across variants.
    let mlp = match variant {
        ScenarioVariant::NonlinearMlp { hidden } => {
            let mut w1 = Matrix::zeros(*hidden, q);
            for i in 0..*hidden {
                rng.fill_standard_normal(w1.row_mut(i));
            }
            let mut w2 = Matrix::zeros(p, *hidden);
            for i in 0..p {
                rng.fill_standard_normal(w2.row_mut(i));
            }
            Some((w1, w2))
        }
        _ => None,
    };

    let theta_eff = match variant {
        ScenarioVariant::IvStrength(r) => task.theta.scale(*r),
        _ => task.theta.clone(),
    };
    let u_scale = match variant {
        ScenarioVariant::EndogeneityStrength(r) => *r,
        _ => 1.0,
    };

    let samplers = Samplers::new(task)?;

    // Treatment mean as a function of the (possibly variant-transformed)
    // instrument draw.
    let treatment_mean = |z: &[f64]| -> Vec<f64> {
        match (&mlp, variant) {
            (Some((w1, w2)), _) => {
                let mut h = w1.mat_vec(z);
                for v in h.iter_mut() {
                    *v = v.max(0.0);
                }
                w2.mat_vec(&h)
            }
            (None, ScenarioVariant::QuadraticIv) => {
                let sq: Vec<f64> = z.iter().map(|v| v * v).collect();
                theta_eff.t_mat_vec(&sq)
            }
            _ => theta_eff.t_mat_vec(z),
        }
    };

    let shape_instrument = |mut z: Vec<f64>| -> Vec<f64> {
        if let ScenarioVariant::UnderIdentified { q_eff } = variant {
            for v in z.iter_mut().skip(*q_eff) {
                *v = 0.0;
            }
        }
        z
    };

    let mut z_rows = Vec::with_capacity(n);
    let mut x_rows = Vec::with_capacity(n);
    let mut y_vals = Vec::with_capacity(n);
    let mut u_rows = Vec::with_capacity(n);
    let mut omega_rows = Vec::with_capacity(n + 1);
    let mut eps_vals = Vec::with_capacity(n + 1);

    for _ in 0..n {
        let z = shape_instrument(samplers.z.sample(rng));
        let u: Vec<f64> = samplers.u.sample(rng).into_iter().map(|v| v * u_scale).collect();
        let omega = samplers.omega.sample(rng);
        let eps = task.noise_y * rng.standard_normal();

        let mut x = treatment_mean(&z);
        let endo = task.confound_x.t_mat_vec(&u);
        for ((xi, e), w) in x.iter_mut().zip(&endo).zip(&omega) {
            *xi += e + w;
        }
        let y = dot(&task.beta, &x) + dot(&task.confound_y, &u) + eps;

        z_rows.push(z);
        x_rows.push(x);
        y_vals.push(y);
        u_rows.push(u);
        omega_rows.push(omega);
        eps_vals.push(eps);
    }

    // Query draw: no confounder.
    let z_query = shape_instrument(samplers.z.sample(rng));
    let omega_query = samplers.omega.sample(rng);
    let eps_query = task.noise_y * rng.standard_normal();
    let mut x_query = treatment_mean(&z_query);
    for (xi, w) in x_query.iter_mut().zip(&omega_query) {
        *xi += w;
    }
    let y_query = dot(&task.beta, &x_query) + eps_query;
    omega_rows.push(omega_query);
    eps_vals.push(eps_query);

    let data = finish_prompt(z_rows, x_rows, y_vals, z_query, x_query, y_query, bounds)?;
    let trace = GenerationTrace {
        u: Matrix::from_rows(&u_rows)?,
        omega: Matrix::from_rows(&omega_rows)?,
        eps: eps_vals,
    };
    Ok((data, trace))
}

/// Near-duplicate-column scenario. The base prompt is generated at reduced
/// dimensions `(p - dup_x, q - dup_z)` from the leading blocks of the task
/// parameters; duplicated columns are `2 * base + N(0, jitter)` and the
/// outcome is formed from the full treatment vector with the task's
/// `p`-dimensional `beta`, so coefficient error stays well defined.
fn generate_multicollinear(
    task: &TaskParams,
    n: usize,
    bounds: &ClipBounds,
    dup_x: usize,
    dup_z: usize,
    jitter: f64,
    rng: &mut RngStream,
) -> Result<(Dataset, GenerationTrace)> {
    let p = task.p();
    let q = task.q();
    if dup_x >= p || dup_z >= q {
        return Err(Error::InvalidArgument(format!(
            "duplicate column counts ({dup_x}, {dup_z}) must be below (p, q) = ({p}, {q})"
        )));
    }
    let pb = p - dup_x;
    let qb = q - dup_z;

    let take_block = |m: &Matrix, rows: usize, cols: usize| -> Matrix {
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out.set(i, j, m.get(i, j));
            }
        }
        out
    };
    let theta_b = take_block(&task.theta, qb, pb);
    let confound_x_b = take_block(&task.confound_x, pb, pb);
    let confound_y_b: Vec<f64> = task.confound_y[..pb].to_vec();
    let z_sampler = GaussianSampler::new(&take_block(&task.cov_z, qb, qb))?;
    let u_sampler = GaussianSampler::new(&take_block(&task.cov_u, pb, pb))?;
    let omega_sampler = GaussianSampler::new(&take_block(&task.cov_omega, pb, pb))?;
    let jitter_sd = jitter.sqrt();

    let mut z_rows: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut x_rows: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut u_rows = Vec::with_capacity(n);
    let mut omega_rows = Vec::with_capacity(n + 1);
    let mut eps_vals = Vec::with_capacity(n + 1);

    for row in 0..=n {
        let is_query = row == n;
        let z = z_sampler.sample(rng);
        let u = if is_query { vec![0.0; pb] } else { u_sampler.sample(rng) };
        let omega = omega_sampler.sample(rng);
        let eps = task.noise_y * rng.standard_normal();

        let mut x = theta_b.t_mat_vec(&z);
        let endo = confound_x_b.t_mat_vec(&u);
        for ((xi, e), w) in x.iter_mut().zip(&endo).zip(&omega) {
            *xi += e + w;
        }

        z_rows.push(z);
        x_rows.push(x);
        if !is_query {
            let mut padded = u;
            padded.resize(p, 0.0);
            u_rows.push(padded);
        }
        let mut om = omega;
        om.resize(p, 0.0);
        omega_rows.push(om);
        eps_vals.push(eps);
    }

    // Append duplicated columns; column j copies column j - dup.
    for row in z_rows.iter_mut() {
        for j in qb..q {
            let base = row[j - dup_z];
            row.push(2.0 * base + jitter_sd * rng.standard_normal());
        }
    }
    for row in x_rows.iter_mut() {
        for j in pb..p {
            let base = row[j - dup_x];
            row.push(2.0 * base + jitter_sd * rng.standard_normal());
        }
    }

    let mut y_vals = Vec::with_capacity(n);
    for i in 0..n {
        y_vals.push(dot(&task.beta, &x_rows[i]) + dot(&confound_y_b, &u_rows[i][..pb]) + eps_vals[i]);
    }
    let y_query = dot(&task.beta, &x_rows[n]) + eps_vals[n];

    let z_query = z_rows.pop().expect("query row present");
    let x_query = x_rows.pop().expect("query row present");
    let data = finish_prompt(z_rows, x_rows, y_vals, z_query, x_query, y_query, bounds)?;
    let trace = GenerationTrace {
        u: Matrix::from_rows(&u_rows)?,
        omega: Matrix::from_rows(&omega_rows)?,
        eps: eps_vals,
    };
    Ok((data, trace))
}

fn finish_prompt(
    z_rows: Vec<Vec<f64>>,
    x_rows: Vec<Vec<f64>>,
    y_vals: Vec<f64>,
    z_query: Vec<f64>,
    x_query: Vec<f64>,
    y_query: f64,
    bounds: &ClipBounds,
) -> Result<Dataset> {
    let clipped_z: Vec<Vec<f64>> = z_rows.iter().map(|r| clip(r, bounds.z)).collect();
    let clipped_x: Vec<Vec<f64>> = x_rows.iter().map(|r| clip(r, bounds.x)).collect();
    let clipped_y: Vec<f64> = y_vals.iter().map(|&v| clip_scalar(v, bounds.y)).collect();
    Ok(Dataset {
        z: Matrix::from_rows(&clipped_z)?,
        x: Matrix::from_rows(&clipped_x)?,
        y: clipped_y,
        z_query: clip(&z_query, bounds.z),
        x_query: clip(&x_query, bounds.x),
        y_query: clip_scalar(y_query, bounds.y),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless_task(p: usize, q: usize, rng: &mut RngStream) -> TaskParams {
        let mut t = sample_task(p, q, rng);
        t.cov_u = Matrix::zeros(p, p);
        t.cov_omega = Matrix::zeros(p, p);
        t.noise_y = 0.0;
        t
    }

    #[test]
    fn sample_task_shapes_and_defaults() {
        let mut rng = RngStream::new(0, 0);
        let t = sample_task(5, 10, &mut rng);
        assert_eq!((t.q(), t.p()), (10, 5));
        assert_eq!(t.beta.len(), 5);
        assert_eq!(t.confound_x.rows(), 5);
        assert_eq!(t.cov_z, Matrix::identity(10));
        assert_eq!(t.noise_y, 1.0);
    }

    #[test]
    fn sample_task_is_deterministic() {
        let a = sample_task(3, 4, &mut RngStream::new(5, 2));
        let b = sample_task(3, 4, &mut RngStream::new(5, 2));
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.beta, b.beta);
    }

    #[test]
    fn task_coefficients_are_standard_normal() {
        let mut rng = RngStream::new(1, 0);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0.0;
        for _ in 0..2_000 {
            let t = sample_task(2, 3, &mut rng);
            for row in 0..3 {
                for col in 0..2 {
                    let v = t.theta.get(row, col);
                    sum += v;
                    sum_sq += v * v;
                    count += 1.0;
                }
            }
        }
        assert!((sum / count).abs() < 0.05);
        assert!((sum_sq / count - 1.0).abs() < 0.05);
    }

    #[test]
    fn clip_rescales_onto_ball() {
        let c = clip(&[3.0, 4.0], 1.0);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert!((norm(&c) - 1.0).abs() < 1e-15);
        assert_eq!(clip(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        assert_eq!(clip(&[3.0, 4.0], f64::INFINITY), vec![3.0, 4.0]);
        assert_eq!(clip_scalar(-7.0, 2.0), -2.0);
        assert_eq!(clip_scalar(1.5, 2.0), 1.5);
    }

    #[test]
    fn generation_is_deterministic() {
        let task = sample_task(2, 3, &mut RngStream::new(8, 0));
        let (a, _) = generate_prompt(
            &task,
            10,
            &ClipBounds::default(),
            &ScenarioVariant::Standard,
            &mut RngStream::new(8, 1),
        )
        .unwrap();
        let (b, _) = generate_prompt(
            &task,
            10,
            &ClipBounds::default(),
            &ScenarioVariant::Standard,
            &mut RngStream::new(8, 1),
        )
        .unwrap();
        assert_eq!(a.z, b.z);
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
        assert_eq!(a.y_query, b.y_query);
    }

    #[test]
    fn noiseless_prompt_is_exactly_structural() {
        let mut rng = RngStream::new(2, 0);
        let task = noiseless_task(2, 4, &mut rng);
        let (data, _) = generate_prompt(
            &task,
            6,
            &ClipBounds::default(),
            &ScenarioVariant::Standard,
            &mut rng,
        )
        .unwrap();
        for i in 0..6 {
            let want_x = task.theta.t_mat_vec(data.z.row(i));
            for j in 0..2 {
                assert!((data.x.get(i, j) - want_x[j]).abs() < 1e-12);
            }
            assert!((data.y[i] - dot(&task.beta, data.x.row(i))).abs() < 1e-12);
        }
        assert!((data.y_query - dot(&task.beta, &data.x_query)).abs() < 1e-12);
    }

    #[test]
    fn query_outcome_ignores_confounder() {
        // Killing the confounder covariance must leave the query sample
        // bit-identical: the query never draws from it, and stream
        // consumption is covariance-independent.
        let mut rng = RngStream::new(3, 0);
        let task = sample_task(3, 5, &mut rng);
        let mut no_conf = task.clone();
        no_conf.cov_u = Matrix::zeros(3, 3);

        let bounds = ClipBounds::default();
        let (with_u, _) =
            generate_prompt(&task, 8, &bounds, &ScenarioVariant::Standard, &mut RngStream::new(3, 9))
                .unwrap();
        let (without_u, _) = generate_prompt(
            &no_conf,
            8,
            &bounds,
            &ScenarioVariant::Standard,
            &mut RngStream::new(3, 9),
        )
        .unwrap();

        assert_eq!(with_u.z_query, without_u.z_query);
        assert_eq!(with_u.x_query, without_u.x_query);
        assert_eq!(with_u.y_query.to_bits(), without_u.y_query.to_bits());
        // Training treatments do change.
        assert_ne!(with_u.x, without_u.x);
    }

    #[test]
    fn confounder_covariance_between_noise_terms() {
        // With confound_x = I and confound_y = 1-vector, Cov(x-noise, y-noise)
        // should be cov_u * 1 = the all-ones vector.
        let p = 2;
        let q = 2;
        let mut task = sample_task(p, q, &mut RngStream::new(4, 0));
        task.confound_x = Matrix::identity(p);
        task.confound_y = vec![1.0; p];
        task.theta = Matrix::zeros(q, p);
        task.beta = vec![0.0; p];

        let mut acc = vec![0.0; p];
        let mut count = 0.0;
        for sim in 0..50 {
            let (data, trace) = generate_prompt(
                &task,
                2_000,
                &ClipBounds::default(),
                &ScenarioVariant::Standard,
                &mut RngStream::new(4, sim),
            )
            .unwrap();
            for i in 0..2_000 {
                // With theta = beta = 0: x = u + omega and y = 1.u + eps.
                let eps1 = data.y[i];
                for j in 0..p {
                    acc[j] += data.x.get(i, j) * eps1;
                }
                count += 1.0;
            }
            let _ = trace;
        }
        for j in 0..p {
            assert!(
                (acc[j] / count - 1.0).abs() < 0.05,
                "cov component {j} = {}",
                acc[j] / count
            );
        }
    }

    #[test]
    fn iv_strength_one_matches_standard_bitwise() {
        let task = sample_task(2, 3, &mut RngStream::new(6, 0));
        let bounds = ClipBounds::default();
        let (a, _) = generate_prompt(
            &task,
            5,
            &bounds,
            &ScenarioVariant::IvStrength(1.0),
            &mut RngStream::new(6, 1),
        )
        .unwrap();
        let (b, _) =
            generate_prompt(&task, 5, &bounds, &ScenarioVariant::Standard, &mut RngStream::new(6, 1))
                .unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn quadratic_variant_squares_instrument() {
        let mut rng = RngStream::new(7, 0);
        let task = noiseless_task(2, 3, &mut rng);
        let (data, _) =
            generate_prompt(&task, 4, &ClipBounds::default(), &ScenarioVariant::QuadraticIv, &mut rng)
                .unwrap();
        for i in 0..4 {
            let sq: Vec<f64> = data.z.row(i).iter().map(|v| v * v).collect();
            let want = task.theta.t_mat_vec(&sq);
            for j in 0..2 {
                assert!((data.x.get(i, j) - want[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn under_identified_zeroes_trailing_instruments() {
        let mut rng = RngStream::new(9, 0);
        let task = sample_task(5, 10, &mut rng);
        let (data, _) = generate_prompt(
            &task,
            6,
            &ClipBounds::default(),
            &ScenarioVariant::UnderIdentified { q_eff: 3 },
            &mut rng,
        )
        .unwrap();
        for i in 0..6 {
            for j in 3..10 {
                assert_eq!(data.z.get(i, j), 0.0);
            }
            assert!(data.z.row(i)[..3].iter().any(|&v| v != 0.0));
        }
        for j in 3..10 {
            assert_eq!(data.z_query[j], 0.0);
        }
    }

    #[test]
    fn endogeneity_zero_removes_confounding() {
        let mut rng = RngStream::new(10, 0);
        let task = sample_task(2, 4, &mut rng);
        let (data, trace) = generate_prompt(
            &task,
            5,
            &ClipBounds::default(),
            &ScenarioVariant::EndogeneityStrength(0.0),
            &mut rng,
        )
        .unwrap();
        for i in 0..5 {
            for j in 0..2 {
                assert_eq!(trace.u.get(i, j), 0.0);
            }
            // y = beta.x + eps exactly when u = 0.
            let want = dot(&task.beta, data.x.row(i)) + trace.eps[i];
            assert!((data.y[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn multicollinear_columns_track_their_base() {
        let mut rng = RngStream::new(11, 0);
        let task = sample_task(5, 10, &mut rng);
        let variant = ScenarioVariant::Multicollinearity { dup_x: 1, dup_z: 1, jitter: 1e-6 };
        let (data, _) =
            generate_prompt(&task, 50, &ClipBounds::default(), &variant, &mut rng).unwrap();
        assert_eq!(data.p(), 5);
        assert_eq!(data.q(), 10);
        for i in 0..50 {
            assert!((data.x.get(i, 4) - 2.0 * data.x.get(i, 3)).abs() < 1e-2);
            assert!((data.z.get(i, 9) - 2.0 * data.z.get(i, 8)).abs() < 1e-2);
        }
        // Outcome depends on the duplicated column too.
        assert!(task.beta[4] != 0.0);
    }

    #[test]
    fn multicollinear_rejects_excess_duplicates() {
        let mut rng = RngStream::new(12, 0);
        let task = sample_task(2, 3, &mut rng);
        let variant = ScenarioVariant::Multicollinearity { dup_x: 2, dup_z: 1, jitter: 1e-6 };
        assert!(generate_prompt(&task, 4, &ClipBounds::default(), &variant, &mut rng).is_err());
    }

    #[test]
    fn nonlinear_variant_is_deterministic_and_shaped() {
        let task = sample_task(3, 4, &mut RngStream::new(13, 0));
        let variant = ScenarioVariant::NonlinearMlp { hidden: 16 };
        let bounds = ClipBounds::default();
        let (a, _) = generate_prompt(&task, 7, &bounds, &variant, &mut RngStream::new(13, 1)).unwrap();
        let (b, _) = generate_prompt(&task, 7, &bounds, &variant, &mut RngStream::new(13, 1)).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!((a.n(), a.p(), a.q()), (7, 3, 4));
    }

    #[test]
    fn bounds_are_enforced() {
        let mut rng = RngStream::new(14, 0);
        let task = sample_task(3, 4, &mut rng);
        let bounds = ClipBounds { z: 1.0, x: 2.0, y: 0.5, beta: f64::INFINITY };
        let (data, _) =
            generate_prompt(&task, 20, &bounds, &ScenarioVariant::Standard, &mut rng).unwrap();
        for i in 0..20 {
            assert!(norm(data.z.row(i)) <= 1.0 + 1e-12);
            assert!(norm(data.x.row(i)) <= 2.0 + 1e-12);
            assert!(data.y[i].abs() <= 0.5 + 1e-12);
        }
        assert!(norm(&data.z_query) <= 1.0 + 1e-12);
        assert!(norm(&data.x_query) <= 2.0 + 1e-12);
        assert!(data.y_query.abs() <= 0.5 + 1e-12);
    }

    #[test]
    fn invalid_bounds_are_rejected() {
        let bounds = ClipBounds { z: 0.0, ..ClipBounds::default() };
        assert!(bounds.validate().is_err());
        let bounds = ClipBounds { y: -1.0, ..ClipBounds::default() };
        assert!(bounds.validate().is_err());
    }
}
