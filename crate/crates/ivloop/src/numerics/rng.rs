use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::numerics::{sym_eigen, Matrix, DEFAULT_REL_TOL};

/// Deterministic random stream addressed by `(seed, stream_id)`.
///
/// Built on ChaCha8, which supports 2^64 independent streams per seed, so a
/// Monte Carlo driver can hand stream `k` to simulation `k` and get results
/// that do not depend on execution order or worker count. The normal variate
/// transform is pinned here (Marsaglia polar, with the spare cached) instead
/// of delegating to a distribution crate, so regression files stay stable
/// across dependency upgrades.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng, spare_normal: None }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in the half-open interval `(0, 1]`.
    pub fn uniform(&mut self) -> f64 {
        (((self.rng.next_u64() >> 11) + 1) as f64) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via the polar transform.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * factor);
                return u * factor;
            }
        }
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.standard_normal();
        }
    }
}

/// Reusable sampler for `N(0, cov)` that factors the covariance once.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    dim: usize,
    /// `V diag(sqrt(lambda))`, so `transform * g` has covariance `cov`.
    transform: Matrix,
}

impl GaussianSampler {
    pub fn new(cov: &Matrix) -> Result<Self> {
        let e = sym_eigen(cov)?;
        let d = e.values.len();
        let max_mag = e.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut roots = vec![0.0; d];
        for (i, &v) in e.values.iter().enumerate() {
            if v < -DEFAULT_REL_TOL * max_mag {
                return Err(Error::NotPsd { eigenvalue: v });
            }
            roots[i] = v.max(0.0).sqrt();
        }
        let transform = e.vectors.matmul(&Matrix::from_diag(&roots));
        Ok(GaussianSampler { dim: d, transform })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// One multivariate draw. Always consumes exactly `dim` standard
    /// normals from the stream, regardless of the covariance, so streams
    /// stay aligned when covariances change between runs.
    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        rng.fill_standard_normal(&mut g);
        self.transform.mat_vec(&g)
    }
}

/// One draw from `N(0, cov)`. Prefer [`GaussianSampler`] in loops; this
/// refactors the covariance on every call.
pub fn sample_gaussian(cov: &Matrix, rng: &mut RngStream) -> Result<Vec<f64>> {
    Ok(GaussianSampler::new(cov)?.sample(rng))
}
