//! Small dense Gaussians: moment summaries and Cholesky-factored densities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative diagonal jitter applied once when a Cholesky factorization fails.
pub const JITTER_SCALE: f64 = 1e-8;

/// Mean vector and covariance matrix of a Gaussian approximation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianSummary {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    /// `N(mean, variance * I)`.
    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Self {
        let dim = mean.len();
        Self {
            mean,
            cov: DMatrix::identity(dim, dim) * variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Symmetrize in place: `(A + A') / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Lower Cholesky factor of a covariance, stored row-major for the hot loops.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    dim: usize,
    lower: Vec<f64>,
    log_det: f64,
    jittered: bool,
}

impl CholeskyFactor {
    /// Factor `cov`. On failure a single diagonal jitter of
    /// `1e-8 * trace / dim` is added; a second failure is an error.
    pub fn new(cov: &DMatrix<f64>, context: &str) -> Result<Self> {
        if let Some(f) = Self::try_factor(cov) {
            return Ok(f);
        }
        let dim = cov.nrows();
        let trace = cov.trace();
        let scale = if trace.is_finite() && trace > 0.0 {
            trace / dim as f64
        } else {
            1.0
        };
        let mut jittered = cov.clone();
        for i in 0..dim {
            jittered[(i, i)] += JITTER_SCALE * scale;
        }
        match Self::try_factor(&jittered) {
            Some(mut f) => {
                f.jittered = true;
                Ok(f)
            }
            None => Err(Error::NotPositiveDefinite {
                context: context.to_string(),
                matrix: cov.clone(),
            }),
        }
    }

    fn try_factor(cov: &DMatrix<f64>) -> Option<Self> {
        if cov.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let dim = cov.nrows();
        let chol = cov.clone().cholesky()?;
        let l = chol.l();
        let mut lower = vec![0.0; dim * dim];
        let mut log_det = 0.0;
        for i in 0..dim {
            for j in 0..=i {
                lower[i * dim + j] = l[(i, j)];
            }
            let d = l[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            log_det += 2.0 * d.ln();
        }
        Some(Self {
            dim,
            lower,
            log_det,
            jittered: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Whether the jitter fallback was needed.
    pub fn jittered(&self) -> bool {
        self.jittered
    }

    /// Factor of `c * cov` for `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let s = c.sqrt();
        Self {
            dim: self.dim,
            lower: self.lower.iter().map(|v| v * s).collect(),
            log_det: self.log_det + self.dim as f64 * c.ln(),
            jittered: self.jittered,
        }
    }

    /// Log-density of `N(0, cov)` at `diff`.
    pub fn log_density_centered(&self, diff: &[f64]) -> f64 {
        debug_assert_eq!(diff.len(), self.dim);
        let n = self.dim;
        let mut y = [0.0f64; 32];
        let mut heap;
        let y: &mut [f64] = if n <= 32 {
            &mut y[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            let mut s = diff[i];
            for (l, yj) in row.iter().zip(y.iter()) {
                s -= l * yj;
            }
            let v = s / self.lower[i * n + i];
            y[i] = v;
            quad += v * v;
        }
        -0.5 * (n as f64 * LN_2PI + self.log_det + quad)
    }

    /// Log-density of `N(mean, cov)` at `x`.
    pub fn log_density(&self, x: &[f64], mean: &[f64]) -> f64 {
        let mut diff = [0.0f64; 32];
        if self.dim <= 32 {
            for i in 0..self.dim {
                diff[i] = x[i] - mean[i];
            }
            self.log_density_centered(&diff[..self.dim])
        } else {
            let d: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
            self.log_density_centered(&d)
        }
    }

    /// Draw `mean + L z` into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R, out: &mut [f64]) {
        let n = self.dim;
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i + 1];
            out[i] = mean[i] + row.iter().zip(&z).map(|(l, zj)| l * zj).sum::<f64>();
        }
    }
}
