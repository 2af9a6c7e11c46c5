//! Posterior-predictive evaluation: WAIC, survival prediction, the expected
//! discrimination measure (EDM) and effective sample sizes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{design_row, expand_subject, IntervalPartition, SurvivalRecord};
use crate::error::{Error, Result};
use crate::model::{dot, entry_log_likelihood, survival_probability};
use crate::smoother::{normalize_log_weights, FullPaths};

/// Self-normalized estimate of `E[g(beta_{1:J})]` over full-path particles.
pub fn posterior_expectation<G>(paths: &FullPaths, g: G) -> Result<f64>
where
    G: Fn(&[f64]) -> f64,
{
    let mut log_w = paths.log_weights.clone();
    normalize_log_weights(&mut log_w)?;
    let mut acc = 0.0;
    for (s, lw) in log_w.iter().enumerate() {
        if *lw > f64::NEG_INFINITY {
            acc += lw.exp() * g(paths.path(s));
        }
    }
    Ok(acc)
}

/// Log-likelihood of one subject's complete record under a flat path.
pub fn subject_log_likelihood(time: f64, event: bool, z: &[f64], path: &[f64], partition: &IntervalPartition) -> f64 {
    let dim = z.len();
    let (entries, _) = expand_subject(time, event, partition);
    entries
        .iter()
        .map(|e| {
            let beta = &path[e.interval * dim..(e.interval + 1) * dim];
            entry_log_likelihood(dot(z, beta), e.exposure, e.event)
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaicReport {
    /// `-2 * sum_i (lppd_i - p_i)`; lower is better.
    pub waic: f64,
    /// `sum_i (lppd_i - p_i)`; higher is better.
    pub raw: f64,
    pub lppd: f64,
    pub p_waic: f64,
    pub n_test: usize,
    /// Test subjects whose time exceeded the horizon.
    pub truncated: usize,
}

/// WAIC of held-out records under the posterior over full paths.
pub fn waic(test: &[SurvivalRecord], paths: &FullPaths, partition: &IntervalPartition) -> Result<WaicReport> {
    let mut log_w = paths.log_weights.clone();
    normalize_log_weights(&mut log_w)?;
    let live: Vec<(usize, f64)> = log_w
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > f64::NEG_INFINITY)
        .map(|(s, w)| (s, *w))
        .collect();
    let horizon = partition.horizon();
    let truncated = test.iter().filter(|r| r.time > horizon).count();
    if truncated > 0 {
        log::warn!("{truncated} test subjects extend beyond the horizon {horizon} and were truncated");
    }
    let terms: Vec<(f64, f64)> = test
        .par_iter()
        .map(|r| {
            let z = r.design_row();
            let ll: Vec<f64> = live
                .iter()
                .map(|(s, _)| subject_log_likelihood(r.time, r.event, &z, paths.path(*s), partition))
                .collect();
            let max = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lppd = if max == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                max + live
                    .iter()
                    .zip(&ll)
                    .map(|((_, w), l)| (w + l - max).exp())
                    .sum::<f64>()
                    .ln()
            };
            let mean: f64 = live.iter().zip(&ll).map(|((_, w), l)| w.exp() * l).sum();
            let var: f64 = live
                .iter()
                .zip(&ll)
                .map(|((_, w), l)| w.exp() * (l - mean) * (l - mean))
                .sum();
            (lppd, var)
        })
        .collect();
    let lppd: f64 = terms.iter().map(|t| t.0).sum();
    let p_waic: f64 = terms.iter().map(|t| t.1).sum();
    let raw = lppd - p_waic;
    Ok(WaicReport {
        waic: -2.0 * raw,
        raw,
        lppd,
        p_waic,
        n_test: test.len(),
        truncated,
    })
}

/// Posterior-predictive survival probability `S(t | z)` for `0 <= t <= tau_J`.
pub fn predict_survival(paths: &FullPaths, partition: &IntervalPartition, z: &[f64], t: f64) -> Result<f64> {
    if !(0.0..=partition.horizon()).contains(&t) {
        return Err(Error::Domain(format!(
            "prediction time {t} is outside [0, {}]",
            partition.horizon()
        )));
    }
    if z.len() != paths.dim {
        return Err(Error::Domain(format!(
            "design row has length {} but the model has {} coefficients",
            z.len(),
            paths.dim
        )));
    }
    let s = posterior_expectation(paths, |path| {
        survival_probability(path, partition, t, z).unwrap_or(f64::NAN)
    })?;
    Ok(s.clamp(0.0, 1.0))
}

/// A distribution of event times given a design row.
pub trait SurvivalModel: Sync {
    fn dim(&self) -> usize;

    /// Density `f(u | z)` and survival `S(u | z)` at ascending `nodes`.
    fn density_and_survival(&self, z: &[f64], nodes: &[f64]) -> (Vec<f64>, Vec<f64>);
}

/// Adds `weight * f` and `weight * S` of one piecewise-exponential path at
/// ascending `nodes` into the output buffers. A node on a cut takes the
/// hazard of the interval starting there; nodes past the horizon use the
/// last interval.
fn accumulate_path(
    path: &[f64],
    cuts: &[f64],
    z: &[f64],
    nodes: &[f64],
    weight: f64,
    f_out: &mut [f64],
    s_out: &mut [f64],
) {
    let dim = z.len();
    let jn = cuts.len() - 1;
    let hazards: Vec<f64> = (0..jn).map(|j| dot(z, &path[j * dim..(j + 1) * dim]).exp()).collect();
    let mut j = 0;
    let mut base = 0.0;
    for (i, &u) in nodes.iter().enumerate() {
        while j + 1 < jn && u >= cuts[j + 1] {
            base += (cuts[j + 1] - cuts[j]) * hazards[j];
            j += 1;
        }
        let lambda = hazards[j];
        let s = (-(base + (u - cuts[j]) * lambda)).exp();
        f_out[i] += weight * lambda * s;
        s_out[i] += weight * s;
    }
}

/// One coefficient path, e.g. the true data-generating model.
#[derive(Clone, Debug)]
pub struct PathModel<'a> {
    pub partition: &'a IntervalPartition,
    pub path: &'a [f64],
    pub dim: usize,
}

impl SurvivalModel for PathModel<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn density_and_survival(&self, z: &[f64], nodes: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut f = vec![0.0; nodes.len()];
        let mut s = vec![0.0; nodes.len()];
        accumulate_path(self.path, self.partition.cuts(), z, nodes, 1.0, &mut f, &mut s);
        (f, s)
    }
}

/// Posterior-predictive mixture over weighted full paths.
#[derive(Clone, Debug)]
pub struct PredictiveModel<'a> {
    pub partition: &'a IntervalPartition,
    pub paths: &'a FullPaths,
    weights: Vec<(usize, f64)>,
}

impl<'a> PredictiveModel<'a> {
    pub fn new(partition: &'a IntervalPartition, paths: &'a FullPaths) -> Result<Self> {
        let mut log_w = paths.log_weights.clone();
        normalize_log_weights(&mut log_w)?;
        let weights = log_w
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > f64::NEG_INFINITY)
            .map(|(s, w)| (s, w.exp()))
            .collect();
        Ok(Self {
            partition,
            paths,
            weights,
        })
    }
}

impl SurvivalModel for PredictiveModel<'_> {
    fn dim(&self) -> usize {
        self.paths.dim
    }

    fn density_and_survival(&self, z: &[f64], nodes: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut f = vec![0.0; nodes.len()];
        let mut s = vec![0.0; nodes.len()];
        for &(p, w) in &self.weights {
            accumulate_path(self.paths.path(p), self.partition.cuts(), z, nodes, w, &mut f, &mut s);
        }
        (f, s)
    }
}

/// How the fitted density is normalized inside the EDM logarithm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdmDenominator {
    /// `f^(u) / F^(t)`, matching the true-model ratio.
    #[default]
    Horizon,
    /// `f^(u) / F^(u)`.
    Pointwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdmOptions {
    /// Integration horizon; defaults to `tau_J`.
    pub horizon: Option<f64>,
    pub nodes: usize,
    pub denominator: EdmDenominator,
}

impl Default for EdmOptions {
    fn default() -> Self {
        Self {
            horizon: None,
            nodes: 400,
            denominator: EdmDenominator::Horizon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdmReport {
    pub value: f64,
    pub per_subject: Vec<f64>,
    pub horizon: f64,
    pub skipped_nodes: usize,
    pub total_nodes: usize,
}

/// Discrimination between past-life densities at one design row. Returns the
/// trapezoid value and the number of skipped nodes.
pub fn past_life_discrimination(
    truth: &dyn SurvivalModel,
    fitted: &dyn SurvivalModel,
    z: &[f64],
    horizon: f64,
    nodes: usize,
    denominator: EdmDenominator,
) -> Result<(f64, usize)> {
    if nodes < 2 {
        return Err(Error::Config("EDM needs at least two quadrature nodes".into()));
    }
    let h = horizon / (nodes - 1) as f64;
    let grid: Vec<f64> = (0..nodes).map(|i| i as f64 * h).collect();
    let (f, s) = truth.density_and_survival(z, &grid);
    let (fh, sh) = fitted.density_and_survival(z, &grid);
    let big_f = 1.0 - s[nodes - 1];
    if !(big_f > 0.0) {
        return Err(Error::Domain(format!(
            "true event probability by {horizon} is zero for this design row"
        )));
    }
    let big_fh = 1.0 - sh[nodes - 1];
    let mut skipped = 0;
    let mut total = 0.0;
    for i in 0..nodes {
        let p = f[i] / big_f;
        let value = if p == 0.0 {
            0.0
        } else {
            let denom = match denominator {
                EdmDenominator::Horizon => big_fh,
                EdmDenominator::Pointwise => 1.0 - sh[i],
            };
            let q = fh[i] / denom;
            let v = p * (p / q).ln();
            if q > 0.0 && v.is_finite() {
                v
            } else {
                skipped += 1;
                0.0
            }
        };
        let wt = if i == 0 || i == nodes - 1 { 0.5 } else { 1.0 };
        total += wt * value;
    }
    Ok((total * h, skipped))
}

/// Expected discrimination measure averaged over `test_rows` (design rows
/// with a leading 1).
pub fn edm(
    truth: &dyn SurvivalModel,
    fitted: &dyn SurvivalModel,
    test_rows: &[Vec<f64>],
    horizon: f64,
    options: &EdmOptions,
) -> Result<EdmReport> {
    if test_rows.is_empty() {
        return Err(Error::Config("EDM needs at least one test design row".into()));
    }
    let results: Vec<Result<(f64, usize)>> = test_rows
        .par_iter()
        .map(|z| past_life_discrimination(truth, fitted, z, horizon, options.nodes, options.denominator))
        .collect();
    let mut per_subject = Vec::with_capacity(results.len());
    let mut skipped_nodes = 0;
    for r in results {
        let (v, sk) = r?;
        per_subject.push(v);
        skipped_nodes += sk;
    }
    let total_nodes = options.nodes * test_rows.len();
    if skipped_nodes as f64 > 0.05 * total_nodes as f64 {
        return Err(Error::Numerical(format!(
            "EDM skipped {skipped_nodes} of {total_nodes} quadrature nodes with a nonpositive fitted density"
        )));
    }
    if skipped_nodes > 0 {
        log::warn!("EDM skipped {skipped_nodes} of {total_nodes} quadrature nodes");
    }
    let value = per_subject.iter().sum::<f64>() / per_subject.len() as f64;
    Ok(EdmReport {
        value,
        per_subject,
        horizon,
        skipped_nodes,
        total_nodes,
    })
}

/// EDM of a fitted posterior against a true path, at the options' horizon
/// (default `tau_J`).
pub fn edm_against_truth(
    partition: &IntervalPartition,
    true_path: &[f64],
    paths: &FullPaths,
    test_covariates: &[Vec<f64>],
    options: &EdmOptions,
) -> Result<EdmReport> {
    let horizon = options.horizon.unwrap_or(partition.horizon());
    if horizon > partition.horizon() || horizon <= 0.0 {
        return Err(Error::Domain(format!(
            "EDM horizon {horizon} must lie in (0, {}]",
            partition.horizon()
        )));
    }
    let truth = PathModel {
        partition,
        path: true_path,
        dim: paths.dim,
    };
    let fitted = PredictiveModel::new(partition, paths)?;
    let rows: Vec<Vec<f64>> = test_covariates.iter().map(|x| design_row(x)).collect();
    edm(&truth, &fitted, &rows, horizon, options)
}

/// Effective sample size for one coefficient at one interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssCell {
    pub interval: usize,
    pub coefficient: usize,
    /// Across-run average posterior mean.
    pub mean: f64,
    /// Across-run average posterior variance.
    pub variance: f64,
    pub mse: f64,
    #[serde(with = "crate::io::extended_f64")]
    pub ess: f64,
    /// Set when the MSE is zero and `ess` is the `+inf` sentinel.
    pub infinite: bool,
    #[serde(with = "crate::io::extended_f64")]
    pub ess_per_second: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    pub replicates: usize,
    pub num_intervals: usize,
    pub dim: usize,
    /// Mean CPU seconds per replicate.
    pub cpu_seconds: f64,
    /// Interval-major, then coefficient.
    pub cells: Vec<EssCell>,
}

impl EssReport {
    pub fn cell(&self, interval: usize, coefficient: usize) -> &EssCell {
        &self.cells[(interval - 1) * self.dim + coefficient]
    }
}

/// `ESS = mean variance / MSE` across `M` independent runs.
///
/// `means[m][j][c]` and `variances[m][j][c]` are run `m`'s posterior mean and
/// variance of coefficient `c` at interval `j + 1`.
pub fn ess(means: &[Vec<Vec<f64>>], variances: &[Vec<Vec<f64>>], cpu_seconds: &[f64]) -> Result<EssReport> {
    let m = means.len();
    if m < 2 {
        return Err(Error::Config(format!("ESS needs at least two replicates, got {m}")));
    }
    if variances.len() != m || cpu_seconds.len() != m {
        return Err(Error::Config("replicate arrays have different lengths".into()));
    }
    let jn = means[0].len();
    let dim = means[0].first().map_or(0, Vec::len);
    let mf = m as f64;
    let cpu = cpu_seconds.iter().sum::<f64>() / mf;
    let mut cells = Vec::with_capacity(jn * dim);
    for j in 0..jn {
        for c in 0..dim {
            let mean = means.iter().map(|r| r[j][c]).sum::<f64>() / mf;
            let variance = variances.iter().map(|r| r[j][c]).sum::<f64>() / mf;
            let mse = means.iter().map(|r| (r[j][c] - mean).powi(2)).sum::<f64>() / mf;
            let infinite = mse == 0.0;
            let ess = if infinite { f64::INFINITY } else { variance / mse };
            cells.push(EssCell {
                interval: j + 1,
                coefficient: c,
                mean,
                variance,
                mse,
                ess,
                infinite,
                ess_per_second: ess / cpu,
            });
        }
    }
    Ok(EssReport {
        replicates: m,
        num_intervals: jn,
        dim,
        cpu_seconds: cpu,
        cells,
    })
}

/// CPU time consumed by this process, in seconds.
pub fn process_cpu_seconds() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}
