//! Explicit attention weights that make a looped block run the two-stage
//! gradient recursion on any embedded prompt.
//!
//! One block is two attention layers. The first refreshes the predicted
//! treatments: for each component `k` a +/- head pair scores
//! `z_i' theta_k - xhat_ik` against a constant value row, so the residual
//! ReLU pair writes `z_i' theta_k` into the `xhat_k` slot of every column.
//! The second layer applies one gradient update to the replicated state:
//! a head pair per theta column scores the first-stage residual
//! `theta_k' z_j - x_jk` and moves `-(n+1) eta z_j` worth of value mass,
//! and one pair scores the outcome residual `beta' xhat_j - y_j` and moves
//! `-(n+1) alpha xhat_j`. The `1/(n+1)` attention average cancels the
//! `n+1` factor, leaving the exact summed gradient.
//!
//! The query column must not contribute to either gradient. Its outcome
//! slot is already zero; everything else is handled by a mask term
//! `-R (1 - t_j)` folded into each score, which is zero on training
//! columns and drives the query score below the ReLU threshold whenever
//! `R` dominates the scores the recursion can produce. [`compute_mask_bounds`]
//! derives such bounds from a reference run of the plain recursion, with a
//! tenfold margin and a floor of one.
//!
//! Ridge variants append constant-score heads (one per theta column, one
//! for beta) whose values read `-eta tau theta_k` and `-alpha lambda beta`
//! straight from the replicated state rows. With both penalties zero those
//! value matrices vanish and the pass skips them, so the ridge block is
//! bit-identical to the plain one.

use std::fmt::Write as _;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::gd2sls::{run_gd, GDState, LearningRates, DIVERGENCE_LIMIT};
use crate::numerics::{dot, norm, Matrix};

use super::forward::{AttentionHead, AttentionLayerParams, CompiledLayer};
use super::layout::{extract_from, EmbeddedPrompt, Layout};

/// Weights for one looped block plus the scalars they encode.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub p: usize,
    pub q: usize,
    pub n: usize,
    pub rates: LearningRates,
    /// Query mask scale in the treatment-residual heads.
    pub r_bound: f64,
    /// Query mask scale in the outcome-residual heads.
    pub r_prime: f64,
    pub lambda: f64,
    pub tau: f64,
    pub layer1: AttentionLayerParams,
    pub layer2: AttentionLayerParams,
}

fn zero_head(d: usize) -> (Matrix, Matrix, Matrix) {
    (Matrix::zeros(d, d), Matrix::zeros(d, d), Matrix::zeros(d, d))
}

/// Builds the plain block: `2p` heads in the first layer, `2p + 2` in the
/// second.
pub fn build_block(
    p: usize,
    q: usize,
    n: usize,
    rates: LearningRates,
    r_bound: f64,
    r_prime: f64,
) -> BlockParams {
    let mut block = build_ridge_block(p, q, n, rates, r_bound, r_prime, 0.0, 0.0);
    block.layer2.heads.truncate(2 * p + 2);
    block
}

/// Builds the ridge block: the plain heads plus `p + 1` constant-score
/// shrinkage heads, `3p + 3` in the second layer overall.
pub fn build_ridge_block(
    p: usize,
    q: usize,
    n: usize,
    rates: LearningRates,
    r_bound: f64,
    r_prime: f64,
    lambda: f64,
    tau: f64,
) -> BlockParams {
    assert!(p > 0 && q > 0 && n > 0, "degenerate block shape {p}x{q}, n={n}");
    assert!(r_bound > 0.0 && r_prime > 0.0, "mask bounds must be positive");
    let layout = Layout::new(p, q);
    let d = layout.dim();
    let eta_step = (n + 1) as f64 * rates.eta;
    let alpha_step = (n + 1) as f64 * rates.alpha;

    let mut layer1 = AttentionLayerParams::default();
    for k in 0..p {
        for sign in [1.0, -1.0] {
            let (mut qm, mut km, mut vm) = zero_head(d);
            for l in 0..q {
                qm.set(l, layout.z_row(l), sign);
                km.set(l, layout.theta_row(k, l), 1.0);
            }
            qm.set(q, layout.xhat_row(k), -sign);
            km.set(q, layout.one_row(), 1.0);
            vm.set(layout.xhat_row(k), layout.one_row(), sign);
            layer1.heads.push(AttentionHead { q: qm, k: km, v: vm });
        }
    }

    let mut layer2 = AttentionLayerParams::default();
    for k in 0..p {
        for sign in [1.0, -1.0] {
            let (mut qm, mut km, mut vm) = zero_head(d);
            for l in 0..q {
                qm.set(l, layout.theta_row(k, l), sign);
                km.set(l, layout.z_row(l), 1.0);
            }
            qm.set(q, layout.one_row(), -sign);
            km.set(q, layout.x_row(k), 1.0);
            qm.set(q + 1, layout.one_row(), 1.0);
            km.set(q + 1, layout.one_row(), -r_bound);
            km.set(q + 1, layout.flag_row(), r_bound);
            for l in 0..q {
                vm.set(layout.theta_row(k, l), layout.z_row(l), -sign * eta_step);
            }
            layer2.heads.push(AttentionHead { q: qm, k: km, v: vm });
        }
    }
    for sign in [1.0, -1.0] {
        let (mut qm, mut km, mut vm) = zero_head(d);
        for k in 0..p {
            qm.set(k, layout.beta_row(k), sign);
            km.set(k, layout.xhat_row(k), 1.0);
        }
        qm.set(p, layout.one_row(), -sign);
        km.set(p, layout.y_row(), 1.0);
        qm.set(p + 1, layout.one_row(), 1.0);
        km.set(p + 1, layout.one_row(), -r_prime);
        km.set(p + 1, layout.flag_row(), r_prime);
        for k in 0..p {
            vm.set(layout.beta_row(k), layout.xhat_row(k), -sign * alpha_step);
        }
        layer2.heads.push(AttentionHead { q: qm, k: km, v: vm });
    }
    for k in 0..p {
        let (mut qm, mut km, mut vm) = zero_head(d);
        qm.set(0, layout.one_row(), 1.0);
        km.set(0, layout.one_row(), 1.0);
        for l in 0..q {
            vm.set(layout.theta_row(k, l), layout.theta_row(k, l), -rates.eta * tau);
        }
        layer2.heads.push(AttentionHead { q: qm, k: km, v: vm });
    }
    let (mut qm, mut km, mut vm) = zero_head(d);
    qm.set(0, layout.one_row(), 1.0);
    km.set(0, layout.one_row(), 1.0);
    for k in 0..p {
        vm.set(layout.beta_row(k), layout.beta_row(k), -rates.alpha * lambda);
    }
    layer2.heads.push(AttentionHead { q: qm, k: km, v: vm });

    BlockParams {
        p,
        q,
        n,
        rates,
        r_bound,
        r_prime,
        lambda,
        tau,
        layer1,
        layer2,
    }
}

/// Builds the readout layer: one +/- head pair writing `beta' x_i` into
/// the outcome row of every column. Intended to run once after the loops;
/// only the query column's slot is meaningful afterwards, training slots
/// hold `y_i + beta' x_i`.
pub fn build_readout(p: usize, q: usize) -> AttentionLayerParams {
    let layout = Layout::new(p, q);
    let d = layout.dim();
    let mut layer = AttentionLayerParams::default();
    for sign in [1.0, -1.0] {
        let (mut qm, mut km, mut vm) = zero_head(d);
        for k in 0..p {
            qm.set(k, layout.x_row(k), sign);
            km.set(k, layout.beta_row(k), 1.0);
        }
        vm.set(layout.y_row(), layout.one_row(), sign);
        layer.heads.push(AttentionHead { q: qm, k: km, v: vm });
    }
    layer
}

/// Largest score magnitudes a set of states can produce on this prompt:
/// `max |theta' z_i| + max |x_i|` for the treatment heads and
/// `max |beta' theta' z_i|` for the outcome heads, maxima over all samples
/// including the query. Scaled tenfold and floored at one.
pub fn mask_bounds_from_states(data: &Dataset, states: &[GDState]) -> (f64, f64) {
    let cols = data.n() + 1;
    let mut r: f64 = 0.0;
    let mut rp: f64 = 0.0;
    for state in states {
        for i in 0..cols {
            let (z, x) = if i == data.n() {
                (data.z_query.as_slice(), data.x_query.as_slice())
            } else {
                (data.z.row(i), data.x.row(i))
            };
            let pred = state.theta.t_mat_vec(z);
            r = r.max(norm(&pred) + norm(x));
            rp = rp.max(dot(&state.beta, &pred).abs());
        }
    }
    ((10.0 * r).max(1.0), (10.0 * rp).max(1.0))
}

/// Runs the plain recursion for `loops` steps from zero and bounds the
/// scores along the whole trajectory.
pub fn compute_mask_bounds(
    data: &Dataset,
    rates: &LearningRates,
    loops: usize,
) -> Result<(f64, f64)> {
    let traj = run_gd(data, rates, loops, None)?;
    Ok(mask_bounds_from_states(data, &traj.states))
}

/// A weight-shared block applied `loops` times, then a readout layer.
#[derive(Clone, Debug)]
pub struct LoopedModel {
    pub block: BlockParams,
    pub readout: AttentionLayerParams,
    pub loops: usize,
    /// Optional per-column norm clip applied after every block.
    pub layer_clip: Option<f64>,
    compiled1: CompiledLayer,
    compiled2: CompiledLayer,
    compiled_readout: CompiledLayer,
}

impl LoopedModel {
    pub fn new(block: BlockParams, loops: usize) -> Result<Self> {
        let d = Layout::new(block.p, block.q).dim();
        let readout = build_readout(block.p, block.q);
        let compiled1 = CompiledLayer::compile(&block.layer1, d)?;
        let compiled2 = CompiledLayer::compile(&block.layer2, d)?;
        let compiled_readout = CompiledLayer::compile(&readout, d)?;
        Ok(LoopedModel {
            block,
            readout,
            loops,
            layer_clip: None,
            compiled1,
            compiled2,
            compiled_readout,
        })
    }

    pub fn with_layer_clip(mut self, bound: f64) -> Self {
        self.layer_clip = Some(bound);
        self
    }

    fn check_prompt(&self, prompt: &EmbeddedPrompt) -> Result<()> {
        if prompt.p != self.block.p || prompt.q != self.block.q || prompt.n != self.block.n {
            return Err(Error::DimensionMismatch(format!(
                "prompt is p={} q={} n={}, block built for p={} q={} n={}",
                prompt.p, prompt.q, prompt.n, self.block.p, self.block.q, self.block.n
            )));
        }
        Ok(())
    }

    pub fn forward(&self, prompt: &EmbeddedPrompt) -> Result<EmbeddedPrompt> {
        self.run(prompt, None)
    }

    /// Forward pass that also records the replicated state after every loop,
    /// the initial state first.
    pub fn forward_trace(&self, prompt: &EmbeddedPrompt) -> Result<(EmbeddedPrompt, Vec<GDState>)> {
        let mut states = Vec::with_capacity(self.loops + 1);
        let out = self.run(prompt, Some(&mut states))?;
        Ok((out, states))
    }

    fn run(
        &self,
        prompt: &EmbeddedPrompt,
        mut trace: Option<&mut Vec<GDState>>,
    ) -> Result<EmbeddedPrompt> {
        self.check_prompt(prompt)?;
        let (p, q, n) = (prompt.p, prompt.q, prompt.n);
        let mut h = prompt.h.clone();
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(extract_from(&h, p, q, n)?.0);
        }
        for step in 1..=self.loops {
            h = self.compiled1.forward(&h)?;
            h = self.compiled2.forward(&h)?;
            if let Some(bound) = self.layer_clip {
                clip_columns(&mut h, bound);
            }
            let magnitude = h.max_abs();
            if !h.all_finite() || magnitude > DIVERGENCE_LIMIT {
                return Err(Error::Diverged { step, magnitude });
            }
            if let Some(tr) = trace.as_deref_mut() {
                let mut state = extract_from(&h, p, q, n)?.0;
                state.t = step;
                tr.push(state);
            }
        }
        h = self.compiled_readout.forward(&h)?;
        Ok(EmbeddedPrompt { h, p, q, n })
    }
}

/// Applies the model to a prompt.
pub fn looped_forward(model: &LoopedModel, prompt: &EmbeddedPrompt) -> Result<EmbeddedPrompt> {
    model.forward(prompt)
}

/// Applies the model and returns the per-loop state trace alongside.
pub fn looped_forward_trace(
    model: &LoopedModel,
    prompt: &EmbeddedPrompt,
) -> Result<(EmbeddedPrompt, Vec<GDState>)> {
    model.forward_trace(prompt)
}

fn clip_columns(h: &mut Matrix, bound: f64) {
    let (rows, cols) = (h.rows(), h.cols());
    for j in 0..cols {
        let mut sq = 0.0;
        for r in 0..rows {
            sq += h.get(r, j) * h.get(r, j);
        }
        let nrm = sq.sqrt();
        if nrm > bound {
            let s = bound / nrm;
            for r in 0..rows {
                let v = h.get(r, j);
                h.set(r, j, v * s);
            }
        }
    }
}

/// Recovers coefficients from any black-box prediction rule by finite
/// differences on the query treatment: one baseline call plus one per
/// component. Exact whenever the rule is linear in the query treatment,
/// which the looped model is by construction.
pub fn extract_coefficients<F>(mut predictor: F, data: &Dataset, delta: f64) -> Result<Vec<f64>>
where
    F: FnMut(&Dataset) -> Result<f64>,
{
    if !delta.is_finite() || delta == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "finite nonzero probe step required, got {delta}"
        )));
    }
    let base = predictor(data)?;
    let mut coeffs = Vec::with_capacity(data.p());
    for k in 0..data.p() {
        let mut bumped = data.clone();
        bumped.x_query[k] += delta;
        let y = predictor(&bumped)?;
        let slope = (y - base) / delta;
        if !slope.is_finite() {
            return Err(Error::NonFinite(slope));
        }
        coeffs.push(slope);
    }
    Ok(coeffs)
}

/// Flat dump of every nonzero weight, for golden-file comparisons.
/// First record carries the shape: `p,q,n,M,D` with `M` the total head
/// count; entries follow row-major within each head.
pub fn params_csv(model: &LoopedModel) -> String {
    let d = Layout::new(model.block.p, model.block.q).dim();
    let heads = model.block.layer1.heads.len()
        + model.block.layer2.heads.len()
        + model.readout.heads.len();
    let mut out = String::new();
    out.push_str("p,q,n,M,D\n");
    let _ = writeln!(
        out,
        "{},{},{},{},{}",
        model.block.p, model.block.q, model.block.n, heads, d
    );
    out.push_str("layer,head,matrix,row,col,value\n");
    for (layer_name, layer) in [
        ("layer1", &model.block.layer1),
        ("layer2", &model.block.layer2),
        ("readout", &model.readout),
    ] {
        for (hi, head) in layer.heads.iter().enumerate() {
            for (mat_name, m) in [("Q", &head.q), ("K", &head.k), ("V", &head.v)] {
                for r in 0..d {
                    for c in 0..d {
                        let v = m.get(r, c);
                        if v != 0.0 {
                            let _ = writeln!(out, "{layer_name},{hi},{mat_name},{r},{c},{v}");
                        }
                    }
                }
            }
        }
    }
    out
}
