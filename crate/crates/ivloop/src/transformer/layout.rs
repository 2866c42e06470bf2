//! Prompt embedding: packing a dataset and a solver state into the column
//! matrix the attention layers operate on.
//!
//! Each column holds one sample plus a replicated copy of the solver state:
//!
//! ```text
//! h_i = (z_i, x_i, y_i t_i, theta col 0, .., theta col p-1, beta, xhat_i, 1, t_i)
//! ```
//!
//! with `t_i = 1` on the `n` training columns and `0` on the query column
//! (the last one), whose outcome slot is therefore zero. The state rows are
//! bitwise identical across columns; the per-column `xhat` rows hold the
//! instrument-predicted treatment and start at zero.

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::gd2sls::GDState;
use crate::numerics::Matrix;

/// Row arithmetic for the embedding. All indices are zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub p: usize,
    pub q: usize,
}

impl Layout {
    pub fn new(p: usize, q: usize) -> Self {
        Layout { p, q }
    }

    /// Total row count: `qp + 3p + q + 3`.
    pub fn dim(&self) -> usize {
        self.q * self.p + 3 * self.p + self.q + 3
    }

    pub fn z_row(&self, l: usize) -> usize {
        debug_assert!(l < self.q);
        l
    }

    pub fn x_row(&self, k: usize) -> usize {
        debug_assert!(k < self.p);
        self.q + k
    }

    /// Row carrying `y_i t_i`, also where the readout writes the prediction.
    pub fn y_row(&self) -> usize {
        self.q + self.p
    }

    fn state_start(&self) -> usize {
        self.q + self.p + 1
    }

    /// Row of `theta[l, k]` (column `k` of the inner iterate).
    pub fn theta_row(&self, k: usize, l: usize) -> usize {
        debug_assert!(k < self.p && l < self.q);
        self.state_start() + k * self.q + l
    }

    pub fn beta_row(&self, k: usize) -> usize {
        debug_assert!(k < self.p);
        self.state_start() + self.q * self.p + k
    }

    pub fn xhat_row(&self, k: usize) -> usize {
        debug_assert!(k < self.p);
        self.state_start() + self.q * self.p + self.p + k
    }

    /// All-ones row used to source constants.
    pub fn one_row(&self) -> usize {
        self.dim() - 2
    }

    /// Training indicator row: one on training columns, zero on the query.
    pub fn flag_row(&self) -> usize {
        self.dim() - 1
    }
}

/// An embedded prompt: `dim x (n + 1)` matrix plus its shape.
#[derive(Clone, Debug)]
pub struct EmbeddedPrompt {
    pub h: Matrix,
    pub p: usize,
    pub q: usize,
    pub n: usize,
}

impl EmbeddedPrompt {
    pub fn layout(&self) -> Layout {
        Layout::new(self.p, self.q)
    }

    /// Index of the query column.
    pub fn query_col(&self) -> usize {
        self.n
    }
}

/// Packs a dataset and an initial solver state into an embedded prompt.
pub fn embed(data: &Dataset, init: &GDState) -> Result<EmbeddedPrompt> {
    let (p, q, n) = (data.p(), data.q(), data.n());
    if init.theta.rows() != q || init.theta.cols() != p || init.beta.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "state is theta {}x{} beta {}, data needs theta {}x{} beta {}",
            init.theta.rows(),
            init.theta.cols(),
            init.beta.len(),
            q,
            p,
            p
        )));
    }
    let layout = Layout::new(p, q);
    let cols = n + 1;
    let mut h = Matrix::zeros(layout.dim(), cols);

    for i in 0..cols {
        let is_query = i == n;
        let (z, x) = if is_query {
            (data.z_query.as_slice(), data.x_query.as_slice())
        } else {
            (data.z.row(i), data.x.row(i))
        };
        for l in 0..q {
            h.set(layout.z_row(l), i, z[l]);
        }
        for k in 0..p {
            h.set(layout.x_row(k), i, x[k]);
        }
        if !is_query {
            h.set(layout.y_row(), i, data.y[i]);
        }
        for k in 0..p {
            for l in 0..q {
                h.set(layout.theta_row(k, l), i, init.theta.get(l, k));
            }
            h.set(layout.beta_row(k), i, init.beta[k]);
        }
        h.set(layout.one_row(), i, 1.0);
        if !is_query {
            h.set(layout.flag_row(), i, 1.0);
        }
    }

    Ok(EmbeddedPrompt { h, p, q, n })
}

/// Reads the prediction slot: the query column's outcome row.
pub fn read_y(prompt: &EmbeddedPrompt) -> f64 {
    prompt.h.get(prompt.layout().y_row(), prompt.query_col())
}

const REPLICATION_TOL: f64 = 1e-9;

/// Recovers the solver state and the per-column predicted treatments.
///
/// The state rows must still be replicated across columns (within 1e-9);
/// a violation means a forward pass corrupted the embedding. The returned
/// matrix holds `xhat_i` per row `i`, query last.
pub fn extract_state(prompt: &EmbeddedPrompt) -> Result<(GDState, Matrix)> {
    extract_from(&prompt.h, prompt.p, prompt.q, prompt.n)
}

pub(crate) fn extract_from(h: &Matrix, p: usize, q: usize, n: usize) -> Result<(GDState, Matrix)> {
    let layout = Layout::new(p, q);
    let cols = n + 1;

    let check_replicated = |row: usize, what: &str| -> Result<f64> {
        let v = h.get(row, 0);
        for j in 1..cols {
            let d = (h.get(row, j) - v).abs();
            if !(d <= REPLICATION_TOL) {
                return Err(Error::CorruptedState(format!(
                    "{what} row {row} differs across columns by {d:e}"
                )));
            }
        }
        Ok(v)
    };

    let mut theta = Matrix::zeros(q, p);
    for k in 0..p {
        for l in 0..q {
            theta.set(l, k, check_replicated(layout.theta_row(k, l), "theta")?);
        }
    }
    let mut beta = vec![0.0; p];
    for (k, slot) in beta.iter_mut().enumerate() {
        *slot = check_replicated(layout.beta_row(k), "beta")?;
    }
    let mut xhat = Matrix::zeros(cols, p);
    for i in 0..cols {
        for k in 0..p {
            xhat.set(i, k, h.get(layout.xhat_row(k), i));
        }
    }
    Ok((GDState { theta, beta, t: 0 }, xhat))
}
