//! Piecewise exponential hazard likelihood, survival function and the
//! discounted random-walk prior on the coefficients.
//!
//! Coefficient vectors are plain slices `beta = (beta_0, beta_1, ..., beta_P)`
//! with the log baseline hazard first, so `ln lambda_ij = z_i' beta_j`.
//! A coefficient path over `J` intervals is stored flat, interval-major
//! (`J * (P + 1)` values).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{IntervalPartition, IntervalSlice};
use crate::error::{Error, Result};
use crate::gaussian::{CholeskyFactor, GaussianSummary};

/// Prior variance per coefficient of the initial distribution.
pub const DEFAULT_INITIAL_VARIANCE: f64 = 100.0;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-likelihood of one interval entry: `d * eta - t * exp(eta)`.
#[inline]
pub fn entry_log_likelihood(eta: f64, exposure: f64, event: bool) -> f64 {
    let mut ll = if event { eta } else { 0.0 };
    if exposure > 0.0 {
        // exp overflow saturates to -inf
        ll -= exposure * eta.exp();
    }
    ll
}

/// `log L_j(t_j | beta) = sum_i [d_ij z_i'beta - t_ij exp(z_i'beta)]`.
pub fn interval_log_likelihood(slice: &IntervalSlice, beta: &[f64]) -> f64 {
    let mut ll = 0.0;
    for i in 0..slice.len() {
        let eta = dot(slice.row(i), beta);
        ll += entry_log_likelihood(eta, slice.exposure[i], slice.event[i]);
    }
    if ll.is_nan() {
        f64::NEG_INFINITY
    } else {
        ll
    }
}

/// Cumulative hazard `int_0^t lambda(s | z) ds` along a flat coefficient path.
pub fn cumulative_hazard(path: &[f64], partition: &IntervalPartition, t: f64, z: &[f64]) -> Result<f64> {
    let dim = z.len();
    let jn = partition.num_intervals();
    if path.len() != jn * dim {
        return Err(Error::Domain(format!(
            "coefficient path has {} values, expected {}",
            path.len(),
            jn * dim
        )));
    }
    if !(t >= 0.0) || t > partition.horizon() {
        return Err(Error::Domain(format!("time {t} outside [0, {}]", partition.horizon())));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let h = partition.terminal_interval(t);
    let mut total = 0.0;
    for j in 0..=h {
        let (lo, hi) = partition.bounds(j);
        let span = t.min(hi) - lo;
        total += span * dot(&path[j * dim..(j + 1) * dim], z).exp();
    }
    Ok(total)
}

/// `S(t | z) = exp(-[sum_{j<h} lambda_j (tau_j - tau_{j-1})] - lambda_h (t - tau_{h-1}))`.
pub fn survival_probability(path: &[f64], partition: &IntervalPartition, t: f64, z: &[f64]) -> Result<f64> {
    Ok((-cumulative_hazard(path, partition, t, z)?).exp())
}

/// Hazard at time `t` (`tau_{h-1} <= t < tau_h`; `t = tau_J` uses the last interval).
pub fn hazard(path: &[f64], partition: &IntervalPartition, t: f64, z: &[f64]) -> f64 {
    let dim = z.len();
    let j = partition.cuts()[1..]
        .partition_point(|&c| c <= t)
        .min(partition.num_intervals() - 1);
    dot(&path[j * dim..(j + 1) * dim], z).exp()
}

/// Evolution variance `U_j = (1/phi - 1) * Sigma_{j-1}`.
pub fn discount_variance(sigma_prev: &DMatrix<f64>, phi: f64) -> Result<DMatrix<f64>> {
    check_phi(phi)?;
    CholeskyFactor::new(sigma_prev, "discount variance")?;
    Ok(sigma_prev * (1.0 / phi - 1.0))
}

pub(crate) fn check_phi(phi: f64) -> Result<()> {
    if phi > 0.0 && phi < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("discount factor {phi} must lie in (0, 1)")))
    }
}

/// `log N(beta_to - beta_from; 0, U)`.
pub fn rw_transition_logdensity(beta_to: &[f64], beta_from: &[f64], u: &DMatrix<f64>) -> Result<f64> {
    let chol = CholeskyFactor::new(u, "random-walk covariance")?;
    if chol.jittered() {
        return Err(Error::NotPositiveDefinite {
            context: "random-walk covariance is singular".into(),
            matrix: u.clone(),
        });
    }
    Ok(chol.log_density(beta_to, beta_from))
}

/// Discount factor and the initial distribution `p(beta_1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountPrior {
    pub phi: f64,
    pub initial_mean: Vec<f64>,
    /// Diagonal variance of the initial distribution.
    pub initial_variance: f64,
}

impl DiscountPrior {
    /// Zero mean, variance 100 per coefficient.
    pub fn new(phi: f64, dim: usize) -> Self {
        Self {
            phi,
            initial_mean: vec![0.0; dim],
            initial_variance: DEFAULT_INITIAL_VARIANCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_phi(self.phi)?;
        if !(self.initial_variance > 0.0) || !self.initial_variance.is_finite() {
            return Err(Error::Config(format!(
                "initial variance {} must be positive",
                self.initial_variance
            )));
        }
        if self.initial_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("initial mean must be finite".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.initial_mean.len()
    }

    pub fn initial_summary(&self) -> GaussianSummary {
        GaussianSummary::isotropic(DVector::from_vec(self.initial_mean.clone()), self.initial_variance)
    }
}
