//! The two-filter particle smoother.
//!
//! Three passes over the intervals, strictly in this order:
//!
//! 1. a forward auxiliary particle filter targeting `p(beta_j | t_{1:j})`,
//!    which also caches the weighted moments `(mu_j, Sigma_j)`;
//! 2. a backward information filter targeting the artificial posterior
//!    `p(t_{j:J} | beta_j) gamma_j(beta_j)`, with
//!    `gamma_j = N(mu_{j-1}, Sigma_{j-1} / phi)` for `j > 1` and `gamma_1`
//!    the initial distribution;
//! 3. a smoothing filter that pairs forward particles at `j-1` with backward
//!    particles at `j+1` and targets `p(beta_j | t_{1:J})`.
//!
//! Every random draw comes from a counter-based stream keyed by
//! `(phase, interval, particle)`, so results do not depend on how rayon
//! schedules the particle loops.
//!
//! Interval indices here are 1-based (`1..=J`). Index 0 of the forward pass
//! is a point mass at the initial mean, and the transition into interval 1 is
//! the initial distribution itself, so `p(beta_1) = N(mu_0, Sigma_0)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ExpandedPanel, IntervalPartition, IntervalSlice};
use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, CholeskyFactor, GaussianSummary, JITTER_SCALE};
use crate::model::{interval_log_likelihood, DiscountPrior};
use crate::proposals::{ForwardRecursion, ProposalDiagnostics};
use crate::rng::{Phase, StreamSeed};

/// Which proposal family the three filters use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalKind {
    /// Linear-Bayes proposals with likelihood lookahead in the ancestor weights.
    #[default]
    LinearBayes,
    /// Prior-transition proposals with ancestor weights equal to the filter weights.
    Bootstrap,
}

impl ProposalKind {
    fn lookahead(self) -> bool {
        matches!(self, ProposalKind::LinearBayes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmootherConfig {
    /// Forward and backward particles `K`.
    pub particles: usize,
    /// Smoothing particles per filter particle; `S = R * K`.
    pub smoothing_factor: usize,
    pub seed: StreamSeed,
    pub proposal: ProposalKind,
}

impl SmootherConfig {
    pub fn new(particles: usize, smoothing_factor: usize, seed: u64) -> Self {
        Self {
            particles,
            smoothing_factor,
            seed: StreamSeed::new(seed),
            proposal: ProposalKind::LinearBayes,
        }
    }

    pub fn smoothing_particles(&self) -> usize {
        self.particles * self.smoothing_factor
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles < 1 {
            return Err(Error::Config("at least one particle is required".into()));
        }
        if self.smoothing_factor < 1 {
            return Err(Error::Config("smoothing factor R must be at least 1".into()));
        }
        Ok(())
    }
}

/// Normalize log-weights in place by max-shift. Returns the log of the
/// unnormalized total. NaN entries are treated as `-inf`.
pub fn normalize_log_weights(log_w: &mut [f64]) -> Result<f64> {
    for w in log_w.iter_mut() {
        if w.is_nan() {
            *w = f64::NEG_INFINITY;
        }
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Degenerate(if max == f64::INFINITY {
            "infinite log-weight".into()
        } else {
            "all log-weights are -inf".into()
        }));
    }
    let total: f64 = log_w.iter().map(|w| (w - max).exp()).sum();
    let log_total = max + total.ln();
    for w in log_w.iter_mut() {
        *w -= log_total;
    }
    Ok(log_total)
}

/// `1 / sum w^2` of normalized log-weights.
pub fn ess_from_log_weights(log_w: &[f64]) -> f64 {
    1.0 / log_w.iter().map(|w| (2.0 * w).exp()).sum::<f64>()
}

/// Weighted particles for one interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub interval: usize,
    pub dim: usize,
    /// Row-major, one coefficient vector per particle.
    pub particles: Vec<f64>,
    /// Normalized log-weights.
    pub log_weights: Vec<f64>,
    /// Index of each particle's ancestor in the previous set of its pass.
    pub ancestors: Vec<usize>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    #[inline]
    pub fn particle(&self, k: usize) -> &[f64] {
        &self.particles[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn ess(&self) -> f64 {
        ess_from_log_weights(&self.log_weights)
    }

    pub fn max_weight(&self) -> f64 {
        self.log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp()
    }

    /// Column `c` of every particle.
    pub fn coordinate(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|k| self.particles[k * self.dim + c]).collect()
    }
}

/// Weighted mean and covariance of a particle set.
pub fn weighted_moments(set: &ParticleSet) -> Result<GaussianSummary> {
    let mut log_w = set.log_weights.clone();
    normalize_log_weights(&mut log_w)?;
    let dim = set.dim;
    let w: Vec<f64> = log_w.iter().map(|v| v.exp()).collect();
    let mut mean = DVector::zeros(dim);
    for (k, wk) in w.iter().enumerate() {
        if *wk > 0.0 {
            for (c, v) in set.particle(k).iter().enumerate() {
                mean[c] += wk * v;
            }
        }
    }
    let mut cov = DMatrix::zeros(dim, dim);
    let mut diff = vec![0.0; dim];
    for (k, wk) in w.iter().enumerate() {
        if *wk > 0.0 {
            for (c, v) in set.particle(k).iter().enumerate() {
                diff[c] = v - mean[c];
            }
            for a in 0..dim {
                for b in 0..=a {
                    cov[(a, b)] += wk * diff[a] * diff[b];
                }
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    Ok(GaussianSummary::new(mean, cov))
}

/// Weighted quantile of `values` (weights need not be normalized).
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| weights[i] > 0.0).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = idx.iter().map(|&i| weights[i]).sum();
    let target = q * total;
    let mut acc = 0.0;
    for &i in &idx {
        acc += weights[i];
        if acc >= target {
            return values[i];
        }
    }
    idx.last().map(|&i| values[i]).unwrap_or(f64::NAN)
}

/// Quality of one interval of one pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub interval: usize,
    pub ess: f64,
    pub max_weight: f64,
    pub degenerate: bool,
}

impl StepDiagnostics {
    fn of(set: &ParticleSet) -> Self {
        let ess = set.ess();
        let max_weight = set.max_weight();
        let degenerate = max_weight >= 1.0 - 1e-12 && ess < 2.0;
        if degenerate && set.len() > 1 {
            log::warn!("particle set at interval {} is degenerate", set.interval);
        }
        Self {
            interval: set.interval,
            ess,
            max_weight,
            degenerate,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SmootherDiagnostics {
    pub forward: Vec<StepDiagnostics>,
    pub backward: Vec<StepDiagnostics>,
    pub smoothing: Vec<StepDiagnostics>,
    pub proposals: ProposalDiagnostics,
    /// Filter covariances that needed diagonal jitter.
    pub moment_jitter: usize,
}

impl SmootherDiagnostics {
    pub fn degenerate_intervals(&self) -> usize {
        self.forward
            .iter()
            .chain(&self.backward)
            .chain(&self.smoothing)
            .filter(|d| d.degenerate)
            .count()
    }
}

/// Regularized filter moments at one interval.
#[derive(Clone, Debug)]
pub struct FilterMoments {
    pub summary: GaussianSummary,
    /// Covariance actually used downstream (jitter applied if needed).
    pub cov: DMatrix<f64>,
    pub chol: CholeskyFactor,
}

impl FilterMoments {
    fn new(summary: GaussianSummary, jitter_count: &mut usize) -> Result<Self> {
        let chol = CholeskyFactor::new(&summary.cov, "filter covariance")?;
        let mut cov = summary.cov.clone();
        if chol.jittered() {
            *jitter_count += 1;
            let dim = cov.nrows();
            let trace = cov.trace();
            let scale = if trace > 0.0 { trace / dim as f64 } else { 1.0 };
            for i in 0..dim {
                cov[(i, i)] += JITTER_SCALE * scale;
            }
        }
        symmetrize(&mut cov);
        Ok(Self { summary, cov, chol })
    }

    pub fn mean(&self) -> &[f64] {
        self.summary.mean.as_slice()
    }
}

/// Per-interval state carried from the forward pass into the backward and
/// smoothing passes.
#[derive(Clone, Debug, Default)]
pub struct IntervalCache {
    /// Forward filter moments `(mu_j, Sigma_j)`.
    pub moments: Option<FilterMoments>,
    /// `U_j = (1/phi - 1) Sigma_{j-1}`; `U_1 = Sigma_0`.
    pub transition: Option<DMatrix<f64>>,
    transition_chol: Option<CholeskyFactor>,
    recursion: Option<ForwardRecursion>,
    /// `log L_j(t_j | beta_{j-1}^k)` for the forward set at `j-1`.
    pub forward_lookahead: Vec<f64>,
    /// Normalized `log nu_j^k`.
    pub forward_log_nu: Vec<f64>,
    /// `m_j` per forward ancestor, filled lazily.
    pub ancestor_means: Vec<Option<Vec<f64>>>,
    /// `log L_j(t_j | beta~_{j+1}^h)` for the backward set at `j+1`.
    pub backward_lookahead: Vec<f64>,
    /// Normalized `log nu~_j^h`.
    pub backward_log_nu: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct FilterCache {
    /// Indexed `0..=J`; slot 0 holds the initial distribution.
    pub intervals: Vec<IntervalCache>,
}

impl FilterCache {
    pub fn new(num_intervals: usize) -> Self {
        Self {
            intervals: vec![IntervalCache::default(); num_intervals + 1],
        }
    }

    /// Evolution variance into interval `j` and its factor.
    fn evolution(&self, j: usize, phi: f64) -> Result<(DMatrix<f64>, CholeskyFactor)> {
        let prev = self.moments(j - 1)?;
        if j == 1 {
            return Ok((prev.cov.clone(), prev.chol.clone()));
        }
        Ok((&prev.cov * (1.0 / phi - 1.0), prev.chol.scaled(1.0 / phi - 1.0)))
    }

    /// Factor of the artificial prior `gamma_j`, centred at `mu_{j-1}`.
    fn gamma(&self, j: usize, phi: f64) -> Result<CholeskyFactor> {
        let prev = self.moments(j - 1)?;
        Ok(if j == 1 {
            prev.chol.clone()
        } else {
            prev.chol.scaled(1.0 / phi)
        })
    }

    fn moments(&self, j: usize) -> Result<&FilterMoments> {
        self.intervals[j]
            .moments
            .as_ref()
            .ok_or_else(|| Error::Config(format!("forward moments for interval {j} are missing")))
    }
}

/// Shared per-run settings handed to the step functions.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub prior: &'a DiscountPrior,
    pub config: &'a SmootherConfig,
}

fn cumulative(log_nu: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    log_nu
        .iter()
        .map(|w| {
            acc += w.exp();
            acc
        })
        .collect()
}

#[inline]
fn draw_index<R: Rng>(cum: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let target = u * cum[cum.len() - 1];
    cum.partition_point(|&c| c <= target).min(cum.len() - 1)
}

fn log_likelihoods(set: &ParticleSet, slice: &IntervalSlice) -> Vec<f64> {
    (0..set.len())
        .into_par_iter()
        .map(|k| interval_log_likelihood(slice, set.particle(k)))
        .collect()
}

/// The forward set at index 0: `K` uniform-weight copies of the initial mean.
/// Slot 0 of the cache holds the initial distribution, which the first
/// forward step uses as its transition.
pub fn initial_particles(
    prior: &DiscountPrior,
    config: &SmootherConfig,
    cache: &mut FilterCache,
) -> Result<ParticleSet> {
    prior.validate()?;
    let dim = prior.dim();
    let k = config.particles;
    let summary = prior.initial_summary();
    let particles = summary.mean.as_slice().repeat(k);
    let mut jitter = 0;
    cache.intervals[0].moments = Some(FilterMoments::new(summary, &mut jitter)?);
    Ok(ParticleSet {
        interval: 0,
        dim,
        particles,
        log_weights: vec![-(k as f64).ln(); k],
        ancestors: (0..k).collect(),
    })
}

struct Draw {
    beta: Vec<f64>,
    log_weight: f64,
    ancestor: usize,
    mean: Option<Vec<f64>>,
}

/// Forward component for ancestor `a`: its mean and the shared factor.
fn forward_component(
    entry: &IntervalCache,
    slice: &IntervalSlice,
    prev: &ParticleSet,
    a: usize,
    proposal: ProposalKind,
) -> Vec<f64> {
    match proposal {
        ProposalKind::LinearBayes => {
            if let Some(Some(m)) = entry.ancestor_means.get(a) {
                return m.clone();
            }
            entry
                .recursion
                .as_ref()
                .expect("forward recursion present")
                .mean(slice, prev.particle(a))
        }
        ProposalKind::Bootstrap => prev.particle(a).to_vec(),
    }
}

fn forward_factor(entry: &IntervalCache, proposal: ProposalKind) -> &CholeskyFactor {
    match proposal {
        ProposalKind::LinearBayes => entry.recursion.as_ref().expect("forward recursion present").factor(),
        ProposalKind::Bootstrap => entry.transition_chol.as_ref().expect("transition present"),
    }
}

/// One forward particle draw, shared by the forward pass and the smoothing
/// pass at `j = J`.
fn forward_draw(
    entry: &IntervalCache,
    slice: &IntervalSlice,
    prev: &ParticleSet,
    cum: &[f64],
    proposal: ProposalKind,
    rng: &mut impl Rng,
) -> Draw {
    let dim = prev.dim;
    let a = draw_index(cum, rng);
    let mean = forward_component(entry, slice, prev, a, proposal);
    let factor = forward_factor(entry, proposal);
    let mut beta = vec![0.0; dim];
    factor.sample_into(&mean, rng, &mut beta);
    let transition = entry.transition_chol.as_ref().expect("transition present");
    let mut log_w = interval_log_likelihood(slice, &beta) + transition.log_density(&beta, prev.particle(a))
        - factor.log_density(&beta, &mean);
    if proposal.lookahead() {
        log_w -= entry.forward_lookahead[a];
    }
    Draw {
        beta,
        log_weight: log_w,
        ancestor: a,
        mean: matches!(proposal, ProposalKind::LinearBayes).then_some(mean),
    }
}

fn assemble(interval: usize, dim: usize, draws: Vec<Draw>) -> Result<(ParticleSet, Vec<Option<Vec<f64>>>)> {
    let mut particles = Vec::with_capacity(draws.len() * dim);
    let mut log_weights = Vec::with_capacity(draws.len());
    let mut ancestors = Vec::with_capacity(draws.len());
    let mut means = Vec::with_capacity(draws.len());
    for d in draws {
        particles.extend_from_slice(&d.beta);
        log_weights.push(d.log_weight);
        ancestors.push(d.ancestor);
        means.push(d.mean);
    }
    normalize_log_weights(&mut log_weights).map_err(|e| Error::Degenerate(format!("interval {interval}: {e}")))?;
    Ok((
        ParticleSet {
            interval,
            dim,
            particles,
            log_weights,
            ancestors,
        },
        means,
    ))
}

/// Forward auxiliary particle filter step from `prev` (interval `j-1`) to `j`.
pub fn forward_step(
    prev: &ParticleSet,
    slice: &IntervalSlice,
    ctx: StepContext<'_>,
    cache: &mut FilterCache,
) -> Result<ParticleSet> {
    let j = prev.interval + 1;
    let phi = ctx.prior.phi;
    let proposal = ctx.config.proposal;
    let k = ctx.config.particles;
    let (u, u_chol) = cache.evolution(j, phi)?;

    let lookahead = if proposal.lookahead() {
        log_likelihoods(prev, slice)
    } else {
        Vec::new()
    };
    let mut log_nu = prev.log_weights.clone();
    if proposal.lookahead() {
        for (n, l) in log_nu.iter_mut().zip(&lookahead) {
            *n += l;
        }
    }
    normalize_log_weights(&mut log_nu)
        .map_err(|e| Error::Degenerate(format!("forward ancestor weights at interval {j}: {e}")))?;
    let recursion = match proposal {
        ProposalKind::LinearBayes => Some(ForwardRecursion::new(&u, slice)?),
        ProposalKind::Bootstrap => None,
    };

    let entry = &mut cache.intervals[j];
    entry.transition = Some(u);
    entry.transition_chol = Some(u_chol);
    entry.recursion = recursion;
    entry.forward_lookahead = lookahead;
    entry.forward_log_nu = log_nu;
    entry.ancestor_means = vec![None; prev.len()];

    let entry = &cache.intervals[j];
    let cum = cumulative(&entry.forward_log_nu);
    let seed = ctx.config.seed;
    let draws: Vec<Draw> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.stream(Phase::Forward, j, i);
            forward_draw(entry, slice, prev, &cum, proposal, &mut rng)
        })
        .collect();
    let (set, means) = assemble(j, prev.dim, draws)?;

    let mut jitter = 0;
    let moments = FilterMoments::new(weighted_moments(&set)?, &mut jitter)?;
    let entry = &mut cache.intervals[j];
    for (a, m) in set.ancestors.iter().zip(means) {
        if entry.ancestor_means[*a].is_none() {
            entry.ancestor_means[*a] = m;
        }
    }
    entry.moments = Some(moments);
    Ok(set)
}

/// Backward filter initialization at `J`: draws from `gamma_J`, weighted by
/// `L_J`.
pub fn backward_initial(
    slice: &IntervalSlice,
    num_intervals: usize,
    ctx: StepContext<'_>,
    cache: &FilterCache,
) -> Result<ParticleSet> {
    let jn = num_intervals;
    let phi = ctx.prior.phi;
    let prev = cache.moments(jn - 1)?;
    let gamma = cache.gamma(jn, phi)?;
    let dim = ctx.prior.dim();
    let seed = ctx.config.seed;
    let draws: Vec<Draw> = (0..ctx.config.particles)
        .into_par_iter()
        .map(|h| {
            let mut rng = seed.stream(Phase::Backward, jn, h);
            let mut beta = vec![0.0; dim];
            gamma.sample_into(prev.mean(), &mut rng, &mut beta);
            let log_weight = interval_log_likelihood(slice, &beta);
            Draw {
                beta,
                log_weight,
                ancestor: h,
                mean: None,
            }
        })
        .collect();
    Ok(assemble(jn, dim, draws)?.0)
}

/// Backward information filter step from `next` (interval `j+1`) to `j`.
pub fn backward_step(
    next: &ParticleSet,
    slice: &IntervalSlice,
    ctx: StepContext<'_>,
    cache: &mut FilterCache,
) -> Result<ParticleSet> {
    let j = next.interval - 1;
    let phi = ctx.prior.phi;
    let proposal = ctx.config.proposal;
    let lookahead = if proposal.lookahead() {
        log_likelihoods(next, slice)
    } else {
        Vec::new()
    };
    let mut log_nu = next.log_weights.clone();
    if proposal.lookahead() {
        for (n, l) in log_nu.iter_mut().zip(&lookahead) {
            *n += l;
        }
    }
    normalize_log_weights(&mut log_nu)
        .map_err(|e| Error::Degenerate(format!("backward ancestor weights at interval {j}: {e}")))?;
    let cum = cumulative(&log_nu);

    let here = cache.moments(j)?;
    let before = cache.moments(j - 1)?;
    let proposal_chol = here.chol.scaled(1.0 - phi);
    let next_transition = here.chol.scaled(1.0 / phi - 1.0);
    let gamma_here = cache.gamma(j, phi)?;
    let gamma_next = here.chol.scaled(1.0 / phi);
    let mu_here = here.mean();
    let mu_before = before.mean();
    let dim = next.dim;
    let seed = ctx.config.seed;

    let draws: Vec<Draw> = (0..ctx.config.particles)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.stream(Phase::Backward, j, i);
            let a = draw_index(&cum, &mut rng);
            let anchor = next.particle(a);
            let mean: Vec<f64> = mu_here
                .iter()
                .zip(anchor)
                .map(|(m, b)| (1.0 - phi) * m + phi * b)
                .collect();
            let mut beta = vec![0.0; dim];
            proposal_chol.sample_into(&mean, &mut rng, &mut beta);
            let mut log_w = interval_log_likelihood(slice, &beta)
                + next_transition.log_density(anchor, &beta)
                + gamma_here.log_density(&beta, mu_before)
                - proposal_chol.log_density(&beta, &mean)
                - gamma_next.log_density(anchor, mu_here);
            if proposal.lookahead() {
                log_w -= lookahead[a];
            }
            Draw {
                beta,
                log_weight: log_w,
                ancestor: a,
                mean: None,
            }
        })
        .collect();
    let (set, _) = assemble(j, dim, draws)?;
    let entry = &mut cache.intervals[j];
    entry.backward_lookahead = lookahead;
    entry.backward_log_nu = log_nu;
    Ok(set)
}

/// Smoothing particles at interval `j`, combining the forward set at `j-1`
/// with the backward set at `j+1`. At `j = J` there is no backward side and
/// the step coincides with the forward step (sharing its random streams).
///
/// The returned set records forward ancestors in `ancestors`; the backward
/// partners are returned separately.
pub fn smoothing_step(
    fwd_prev: &ParticleSet,
    bwd_next: Option<&ParticleSet>,
    slice: &IntervalSlice,
    ctx: StepContext<'_>,
    cache: &FilterCache,
) -> Result<(ParticleSet, Vec<usize>)> {
    let j = fwd_prev.interval + 1;
    let phi = ctx.prior.phi;
    let proposal = ctx.config.proposal;
    let s_count = ctx.config.smoothing_particles();
    let entry = &cache.intervals[j];
    let fwd_cum = cumulative(&entry.forward_log_nu);
    let seed = ctx.config.seed;
    let dim = fwd_prev.dim;

    let Some(bwd) = bwd_next else {
        let draws: Vec<Draw> = (0..s_count)
            .into_par_iter()
            .map(|s| {
                let mut rng = seed.stream(Phase::Forward, j, s);
                forward_draw(entry, slice, fwd_prev, &fwd_cum, proposal, &mut rng)
            })
            .collect();
        let (set, _) = assemble(j, dim, draws)?;
        return Ok((set, Vec::new()));
    };

    let bwd_cum = cumulative(&entry.backward_log_nu);
    let here = cache.moments(j)?;
    let transition = entry.transition_chol.as_ref().expect("transition present");
    let next_transition = here.chol.scaled(1.0 / phi - 1.0);
    let gamma_next = here.chol.scaled(1.0 / phi);
    let proposal_chol = forward_factor(entry, proposal).scaled(1.0 - phi);
    let mu_here = here.mean();

    let draws: Vec<(Draw, usize)> = (0..s_count)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed.stream(Phase::Smoothing, j, s);
            let k = draw_index(&fwd_cum, &mut rng);
            let h = draw_index(&bwd_cum, &mut rng);
            let fwd_mean = forward_component(entry, slice, fwd_prev, k, proposal);
            let anchor = bwd.particle(h);
            let mean: Vec<f64> = fwd_mean
                .iter()
                .zip(anchor)
                .map(|(m, b)| (1.0 - phi) * m + phi * b)
                .collect();
            let mut beta = vec![0.0; dim];
            proposal_chol.sample_into(&mean, &mut rng, &mut beta);
            let mut log_w = transition.log_density(&beta, fwd_prev.particle(k))
                + interval_log_likelihood(slice, &beta)
                + next_transition.log_density(anchor, &beta)
                - proposal_chol.log_density(&beta, &mean)
                - gamma_next.log_density(anchor, mu_here);
            if proposal.lookahead() {
                log_w -= entry.forward_lookahead[k] + entry.backward_lookahead[h];
            }
            (
                Draw {
                    beta,
                    log_weight: log_w,
                    ancestor: k,
                    mean: None,
                },
                h,
            )
        })
        .collect();
    let (draws, partners): (Vec<Draw>, Vec<usize>) = draws.into_iter().unzip();
    let (set, _) = assemble(j, dim, draws)?;
    Ok((set, partners))
}

/// Complete coefficient paths `beta_{1:J}` with weights, built from the
/// smoothing particles at `J` and the forward genealogy of their ancestors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullPaths {
    pub dim: usize,
    pub num_intervals: usize,
    /// `S * J * dim` values: path-major, then interval, then coefficient.
    pub values: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl FullPaths {
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    /// Flat `J * dim` path `s`.
    #[inline]
    pub fn path(&self, s: usize) -> &[f64] {
        let stride = self.num_intervals * self.dim;
        &self.values[s * stride..(s + 1) * stride]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    /// A single path with weight one.
    pub fn point_mass(path: Vec<f64>, dim: usize) -> Self {
        let num_intervals = path.len() / dim;
        Self {
            dim,
            num_intervals,
            values: path,
            log_weights: vec![0.0],
        }
    }
}

/// Everything a run of the smoother produces.
#[derive(Clone, Debug)]
pub struct SmootherOutput {
    pub dim: usize,
    pub num_intervals: usize,
    pub phi: f64,
    /// Forward sets `0..=J`.
    pub forward: Vec<ParticleSet>,
    /// Backward sets for `j = 1..=J` (index `j - 1`).
    pub backward: Vec<ParticleSet>,
    /// Smoothing sets for `j = 1..=J` (index `j - 1`).
    pub smoothing: Vec<ParticleSet>,
    /// Forward filter moments for `j = 0..=J`.
    pub forward_summaries: Vec<GaussianSummary>,
    /// Smoothed posterior moments for `j = 1..=J` (index `j - 1`).
    pub smoothed_summaries: Vec<GaussianSummary>,
    /// `U_j` for `j = 1..=J` (index `j - 1`).
    pub transition_covs: Vec<DMatrix<f64>>,
    pub paths: FullPaths,
    pub diagnostics: SmootherDiagnostics,
}

impl SmootherOutput {
    /// Smoothed particle set at interval `j` (1-based).
    pub fn smoothing_set(&self, j: usize) -> &ParticleSet {
        &self.smoothing[j - 1]
    }

    pub fn smoothed_mean(&self, j: usize) -> &DVector<f64> {
        &self.smoothed_summaries[j - 1].mean
    }
}

fn trace_paths(forward: &[ParticleSet], last: &ParticleSet) -> FullPaths {
    let jn = last.interval;
    let dim = last.dim;
    let stride = jn * dim;
    let mut values = vec![0.0; last.len() * stride];
    for (s, row) in values.chunks_mut(stride).enumerate() {
        row[(jn - 1) * dim..].copy_from_slice(last.particle(s));
        let mut k = last.ancestors[s];
        for j in (1..jn).rev() {
            let set = &forward[j];
            row[(j - 1) * dim..j * dim].copy_from_slice(set.particle(k));
            k = set.ancestors[k];
        }
    }
    FullPaths {
        dim,
        num_intervals: jn,
        values,
        log_weights: last.log_weights.clone(),
    }
}

/// Run the forward, backward and smoothing passes.
pub fn run_two_filter_smoother(
    panel: &ExpandedPanel,
    partition: &IntervalPartition,
    prior: &DiscountPrior,
    config: &SmootherConfig,
) -> Result<SmootherOutput> {
    config.validate()?;
    prior.validate()?;
    let jn = panel.num_intervals();
    if jn != partition.num_intervals() {
        return Err(Error::Config(format!(
            "panel has {jn} intervals but the partition has {}",
            partition.num_intervals()
        )));
    }
    if panel.dim() != prior.dim() {
        return Err(Error::Config(format!(
            "prior has dimension {} but the data has {} coefficients",
            prior.dim(),
            panel.dim()
        )));
    }
    let ctx = StepContext { prior, config };
    let mut cache = FilterCache::new(jn);
    let mut diagnostics = SmootherDiagnostics::default();

    let mut forward = Vec::with_capacity(jn + 1);
    forward.push(initial_particles(prior, config, &mut cache)?);
    for j in 1..=jn {
        let set = forward_step(&forward[j - 1], &panel.intervals[j - 1], ctx, &mut cache)?;
        diagnostics.forward.push(StepDiagnostics::of(&set));
        forward.push(set);
    }

    let mut backward = vec![backward_initial(&panel.intervals[jn - 1], jn, ctx, &cache)?];
    for j in (1..jn).rev() {
        let set = backward_step(backward.last().unwrap(), &panel.intervals[j - 1], ctx, &mut cache)?;
        backward.push(set);
    }
    backward.reverse();
    diagnostics.backward = backward.iter().map(StepDiagnostics::of).collect();

    let mut smoothing = Vec::with_capacity(jn);
    let mut smoothed_summaries = Vec::with_capacity(jn);
    for j in 1..=jn {
        let bwd = (j < jn).then(|| &backward[j]);
        let (set, _) = smoothing_step(&forward[j - 1], bwd, &panel.intervals[j - 1], ctx, &cache)?;
        diagnostics.smoothing.push(StepDiagnostics::of(&set));
        smoothed_summaries.push(weighted_moments(&set)?);
        smoothing.push(set);
    }

    for entry in &cache.intervals {
        if let Some(r) = &entry.recursion {
            diagnostics.proposals.merge(&r.diagnostics());
        }
        if entry.moments.as_ref().is_some_and(|m| m.chol.jittered()) {
            diagnostics.moment_jitter += 1;
        }
    }

    let paths = trace_paths(&forward, smoothing.last().unwrap());
    let forward_summaries = cache
        .intervals
        .iter()
        .map(|e| e.moments.as_ref().map(|m| m.summary.clone()).unwrap())
        .collect();
    let transition_covs = cache.intervals[1..]
        .iter()
        .map(|e| e.transition.clone().unwrap())
        .collect();
    Ok(SmootherOutput {
        dim: prior.dim(),
        num_intervals: jn,
        phi: prior.phi,
        forward,
        backward,
        smoothing,
        forward_summaries,
        smoothed_summaries,
        transition_covs,
        paths,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{expand_exposures, SurvivalRecord};

    fn set(values: &[f64], log_w: &[f64]) -> ParticleSet {
        ParticleSet {
            interval: 1,
            dim: 1,
            particles: values.to_vec(),
            log_weights: log_w.to_vec(),
            ancestors: (0..values.len()).collect(),
        }
    }

    #[test]
    fn normalization_sums_to_one() {
        let mut w = vec![-1000.0, -1001.0, f64::NEG_INFINITY, f64::NAN, -999.5];
        normalize_log_weights(&mut w).unwrap();
        let total: f64 = w.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mut w = vec![f64::NEG_INFINITY; 3];
        assert!(matches!(normalize_log_weights(&mut w), Err(Error::Degenerate(_))));
    }

    #[test]
    fn two_point_moments() {
        let h = 0.5f64.ln();
        let g = weighted_moments(&set(&[0.0, 2.0], &[h, h])).unwrap();
        assert!((g.mean[0] - 1.0).abs() < 1e-15);
        assert!((g.cov[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn point_mass_moments() {
        let g = weighted_moments(&set(&[3.5], &[0.0])).unwrap();
        assert_eq!(g.mean[0], 3.5);
        assert_eq!(g.cov[(0, 0)], 0.0);
    }

    #[test]
    fn weighted_quantiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let w = [0.1, 0.4, 0.4, 0.1];
        assert_eq!(weighted_quantile(&v, &w, 0.025), 1.0);
        assert_eq!(weighted_quantile(&v, &w, 0.5), 2.0);
        assert_eq!(weighted_quantile(&v, &w, 0.975), 4.0);
    }

    fn toy_panel() -> (ExpandedPanel, IntervalPartition) {
        let records: Vec<_> = (0..20)
            .map(|i| {
                let x = (i as f64 / 10.0) - 1.0;
                SurvivalRecord::new(format!("{i}"), 0.2 + (i % 7) as f64 * 0.4, i % 3 != 0, vec![x])
            })
            .collect();
        let partition = IntervalPartition::from_cuts(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        (expand_exposures(&records, &partition).unwrap(), partition)
    }

    #[test]
    fn empty_slice_gives_uniform_ancestor_weights() {
        let prior = DiscountPrior::new(0.5, 2);
        let config = SmootherConfig::new(50, 2, 3);
        let mut cache = FilterCache::new(1);
        let init = initial_particles(&prior, &config, &mut cache).unwrap();
        let empty = IntervalSlice::new(2);
        let ctx = StepContext {
            prior: &prior,
            config: &config,
        };
        let set = forward_step(&init, &empty, ctx, &mut cache).unwrap();
        let nu = &cache.intervals[1].forward_log_nu;
        assert!(nu.iter().all(|v| (v - nu[0]).abs() < 1e-12));
        // proposal equals the prior transition, so every weight is equal
        assert!(set.log_weights.iter().all(|v| (v - set.log_weights[0]).abs() < 1e-9));
    }

    #[test]
    fn single_particle_has_unit_weight() {
        let (panel, _) = toy_panel();
        let prior = DiscountPrior::new(0.5, 2);
        let config = SmootherConfig::new(1, 1, 3);
        let mut cache = FilterCache::new(3);
        let init = initial_particles(&prior, &config, &mut cache).unwrap();
        let ctx = StepContext {
            prior: &prior,
            config: &config,
        };
        let set = forward_step(&init, &panel.intervals[0], ctx, &mut cache).unwrap();
        assert_eq!(set.ancestors, vec![0]);
        assert_eq!(set.log_weights, vec![0.0]);
    }

    #[test]
    fn weights_normalized_and_ess_bounded() {
        let (panel, partition) = toy_panel();
        let prior = DiscountPrior::new(0.5, 2);
        let config = SmootherConfig::new(200, 2, 11);
        let out = run_two_filter_smoother(&panel, &partition, &prior, &config).unwrap();
        for s in out.forward.iter().chain(&out.backward).chain(&out.smoothing) {
            let total: f64 = s.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            let ess = s.ess();
            assert!(ess >= 1.0 - 1e-9 && ess <= s.len() as f64 + 1e-9);
        }
        assert_eq!(out.smoothing[0].len(), 400);
        assert_eq!(out.paths.len(), 400);
        assert_eq!(out.paths.path(0).len(), 3 * 2);
        // the last interval of each path is the smoothing particle itself
        let last = out.smoothing_set(3);
        assert_eq!(&out.paths.path(7)[4..6], last.particle(7));
    }

    #[test]
    fn bootstrap_forward_weight_is_the_likelihood() {
        let (panel, _) = toy_panel();
        let prior = DiscountPrior::new(0.5, 2);
        let mut config = SmootherConfig::new(64, 1, 5);
        config.proposal = ProposalKind::Bootstrap;
        let mut cache = FilterCache::new(3);
        let init = initial_particles(&prior, &config, &mut cache).unwrap();
        let ctx = StepContext {
            prior: &prior,
            config: &config,
        };
        let set = forward_step(&init, &panel.intervals[0], ctx, &mut cache).unwrap();
        let mut expected: Vec<f64> = (0..set.len())
            .map(|k| interval_log_likelihood(&panel.intervals[0], set.particle(k)))
            .collect();
        normalize_log_weights(&mut expected).unwrap();
        for (a, b) in set.log_weights.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_seeds_are_bitwise_identical() {
        let (panel, partition) = toy_panel();
        let prior = DiscountPrior::new(0.45, 2);
        let config = SmootherConfig::new(100, 2, 99);
        let a = run_two_filter_smoother(&panel, &partition, &prior, &config).unwrap();
        let b = run_two_filter_smoother(&panel, &partition, &prior, &config).unwrap();
        assert_eq!(a.paths, b.paths);
        assert_eq!(a.smoothing, b.smoothing);
        let c = run_two_filter_smoother(&panel, &partition, &prior, &SmootherConfig::new(100, 2, 100)).unwrap();
        assert_ne!(a.paths, c.paths);
    }

    #[test]
    fn single_interval_smoothing_equals_forward() {
        let records: Vec<_> = (0..15)
            .map(|i| SurvivalRecord::new(format!("{i}"), 0.1 + 0.06 * i as f64, i % 2 == 0, vec![i as f64 / 15.0]))
            .collect();
        let partition = IntervalPartition::from_cuts(vec![0.0, 1.0]).unwrap();
        let panel = expand_exposures(&records, &partition).unwrap();
        let prior = DiscountPrior::new(0.45, 2);
        let config = SmootherConfig::new(300, 1, 4);
        let out = run_two_filter_smoother(&panel, &partition, &prior, &config).unwrap();
        let f = &out.forward_summaries[1].mean;
        let s = out.smoothed_mean(1);
        assert!((f - s).norm() < 1e-12);
    }
}
