//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pehsmooth_core::data::ExpandedPanel;
use pehsmooth_core::{interval_log_likelihood, CholeskyFactor, DiscountPrior, Phase, StreamSeed};
use rand::Rng;
use rand_distr::StandardNormal;

/// Unnormalized log posterior of a flat path `beta_{1:J}` with
/// `beta_1 ~ N(m0, s0 I)`.
pub struct PathPosterior<'a> {
    pub panel: &'a ExpandedPanel,
    pub first: CholeskyFactor,
    pub first_mean: Vec<f64>,
    pub steps: Vec<CholeskyFactor>,
}

impl<'a> PathPosterior<'a> {
    /// `transition_covs[j - 1] = U_j`.
    pub fn new(panel: &'a ExpandedPanel, prior: &DiscountPrior, transition_covs: &[DMatrix<f64>]) -> Self {
        let d = prior.dim();
        let first_cov = DMatrix::identity(d, d) * prior.initial_variance;
        let first = CholeskyFactor::new(&first_cov, "first").unwrap();
        let steps = transition_covs[1..]
            .iter()
            .map(|u| CholeskyFactor::new(u, "step").unwrap())
            .collect();
        Self {
            panel,
            first,
            first_mean: prior.initial_mean.clone(),
            steps,
        }
    }

    pub fn log_density(&self, path: &[f64]) -> f64 {
        let d = self.panel.dim();
        let jn = self.panel.num_intervals();
        let beta = |j: usize| &path[(j - 1) * d..j * d];
        let mut lp = self.first.log_density(beta(1), &self.first_mean);
        for j in 2..=jn {
            lp += self.steps[j - 2].log_density(beta(j), beta(j - 1));
        }
        for j in 1..=jn {
            lp += interval_log_likelihood(&self.panel.intervals[j - 1], beta(j));
        }
        lp
    }
}

/// Posterior means and batch-means Monte Carlo standard errors.
pub struct ChainSummary {
    pub means: Vec<f64>,
    pub mcse: Vec<f64>,
    pub acceptance: f64,
}

fn sample_cov(draws: &[Vec<f64>]) -> DMatrix<f64> {
    let n = draws.len() as f64;
    let d = draws[0].len();
    let mut mean = DVector::zeros(d);
    for x in draws {
        mean += DVector::from_column_slice(x);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for x in draws {
        let c = DVector::from_column_slice(x) - &mean;
        cov += &c * c.transpose();
    }
    cov / (n - 1.0)
}

/// Random-walk Metropolis. A pilot phase tunes a diagonal scale, a second
/// pilot estimates the posterior covariance, and the main chain uses
/// `2.38^2 / d` times that covariance.
pub fn random_walk_metropolis(
    target: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    iterations: usize,
    seed: u64,
) -> ChainSummary {
    let d = start.len();
    let mut rng = StreamSeed::new(seed).stream(Phase::Evaluation, 99, 0);
    let mut x = start.to_vec();
    let mut lx = target(&x);
    assert!(lx.is_finite(), "chain start has zero posterior density");

    let mut scale = vec![0.1; d];
    let mut y = vec![0.0; d];
    for it in 0..20_000 {
        let c = it % d;
        y.copy_from_slice(&x);
        let e: f64 = rng.sample(StandardNormal);
        y[c] += scale[c] * e;
        let ly = target(&y);
        let accept = (ly - lx) > rng.random::<f64>().ln();
        if accept {
            x.copy_from_slice(&y);
            lx = ly;
        }
        scale[c] *= if accept { 1.1 } else { 0.95 };
    }

    let mut pilot = Vec::with_capacity(20_000);
    for _ in 0..40_000 {
        for c in 0..d {
            y.copy_from_slice(&x);
            let e: f64 = rng.sample(StandardNormal);
            y[c] += scale[c] * e;
            let ly = target(&y);
            if (ly - lx) > rng.random::<f64>().ln() {
                x.copy_from_slice(&y);
                lx = ly;
            }
        }
        pilot.push(x.clone());
    }
    let cov = sample_cov(&pilot[10_000..]) * (2.38 * 2.38 / d as f64);
    let chol = CholeskyFactor::new(&cov, "rwm").unwrap();

    let mut sums = vec![0.0; d];
    let batches = 50;
    let per_batch = iterations / batches;
    let mut batch_means = vec![vec![0.0; d]; batches];
    let mut accepted = 0usize;
    for batch in batch_means.iter_mut() {
        for _ in 0..per_batch {
            chol.sample_into(&x, &mut rng, &mut y);
            let ly = target(&y);
            if (ly - lx) > rng.random::<f64>().ln() {
                x.copy_from_slice(&y);
                lx = ly;
                accepted += 1;
            }
            for c in 0..d {
                sums[c] += x[c];
                batch[c] += x[c];
            }
        }
    }
    let total = (batches * per_batch) as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / total).collect();
    let mcse = (0..d)
        .map(|c| {
            let var = batch_means
                .iter()
                .map(|bm| (bm[c] / per_batch as f64 - means[c]).powi(2))
                .sum::<f64>()
                / (batches - 1) as f64;
            (var / batches as f64).sqrt()
        })
        .collect();
    ChainSummary {
        means,
        mcse,
        acceptance: accepted as f64 / total,
    }
}

/// Asymptotic Kolmogorov distribution tail `P(K > x)`.
pub fn kolmogorov_tail(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let mut acc = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        acc += if k as usize % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * acc).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_test(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    (d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d))
}

/// Weighted mean and standard error `sqrt(var / ess)` of one coordinate.
pub fn weighted_mean_se(values: &[f64], log_weights: &[f64]) -> (f64, f64) {
    let w: Vec<f64> = log_weights.iter().map(|v| v.exp()).collect();
    let total: f64 = w.iter().sum();
    let mean = values.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() / total;
    let var = values.iter().zip(&w).map(|(v, w)| w * (v - mean).powi(2)).sum::<f64>() / total;
    let ess = total * total / w.iter().map(|w| w * w).sum::<f64>();
    (mean, (var / ess).sqrt())
}
