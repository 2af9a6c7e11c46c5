//! Simulation of piecewise-exponential survival data with random-walk
//! coefficients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{design_row, IntervalPartition, SurvivalRecord};
use crate::error::{Error, Result};
use crate::model::dot;
use crate::rng::{Phase, StreamSeed};

/// Log baseline hazard per interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Baseline {
    /// `beta_{j,0} = intercept + ln j`.
    LogLinear { intercept: f64 },
    /// `beta_{j,0} = log_hazard` for every `j`.
    Constant { log_hazard: f64 },
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline::LogLinear { intercept: -11.0 }
    }
}

impl Baseline {
    pub fn value(&self, j: usize) -> f64 {
        match *self {
            Baseline::LogLinear { intercept } => intercept + (j as f64).ln(),
            Baseline::Constant { log_hazard } => log_hazard,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConfig {
    /// Number of covariates `P`.
    pub covariates: usize,
    pub subjects: usize,
    pub intervals: usize,
    pub interval_width: f64,
    /// Proportion of censored observations `p_c`.
    pub censoring: f64,
    /// Standard deviation of each random-walk increment.
    pub rw_sd: f64,
    pub baseline: Baseline,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            covariates: 1,
            subjects: 2500,
            intervals: 26,
            interval_width: 20.0,
            censoring: 0.1,
            rw_sd: 0.5,
            baseline: Baseline::default(),
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subjects < 1 {
            return Err(Error::Config("the simulation needs at least one subject".into()));
        }
        if self.intervals < 1 {
            return Err(Error::Config("the simulation needs at least one interval".into()));
        }
        if !(0.0..1.0).contains(&self.censoring) {
            return Err(Error::Config(format!(
                "censoring proportion {} must lie in [0, 1)",
                self.censoring
            )));
        }
        if !(self.interval_width > 0.0) || !self.interval_width.is_finite() {
            return Err(Error::Config(format!(
                "interval width {} must be positive",
                self.interval_width
            )));
        }
        if !(self.rw_sd >= 0.0) || !self.rw_sd.is_finite() {
            return Err(Error::Config(format!(
                "random-walk sd {} must be nonnegative",
                self.rw_sd
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.covariates + 1
    }

    pub fn partition(&self) -> Result<IntervalPartition> {
        let cuts = (0..=self.intervals).map(|j| j as f64 * self.interval_width).collect();
        IntervalPartition::from_cuts(cuts)
    }
}

/// The data-generating coefficients behind a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpTruth {
    pub config: DgpConfig,
    pub cuts: Vec<f64>,
    /// Flat `J * (P + 1)` path, baseline first within each interval.
    pub path: Vec<f64>,
}

impl DgpTruth {
    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    pub fn partition(&self) -> Result<IntervalPartition> {
        IntervalPartition::from_cuts(self.cuts.clone())
    }

    /// Coefficients at interval `j` (1-based).
    pub fn beta(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.path[(j - 1) * d..j * d]
    }
}

/// Event time with cumulative hazard `-ln u`, inverting segment by segment.
/// Returns `None` when the time falls beyond the last cut.
pub fn sample_piecewise_exponential(u: f64, cuts: &[f64], hazards: &[f64]) -> Option<f64> {
    let mut target = -u.ln();
    for (j, &lambda) in hazards.iter().enumerate() {
        let width = cuts[j + 1] - cuts[j];
        let mass = lambda * width;
        if target <= mass {
            return Some(if lambda > 0.0 {
                cuts[j] + target / lambda
            } else {
                cuts[j + 1]
            });
        }
        target -= mass;
    }
    None
}

/// Random-walk coefficient path with the configured baseline.
pub fn simulate_path(config: &DgpConfig) -> Vec<f64> {
    let d = config.dim();
    let mut rng = StreamSeed::new(config.seed).stream(Phase::Simulation, 0, 0);
    let mut path = Vec::with_capacity(config.intervals * d);
    let mut current = vec![0.0; config.covariates];
    for j in 1..=config.intervals {
        path.push(config.baseline.value(j));
        for b in current.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *b += config.rw_sd * e;
        }
        path.extend_from_slice(&current);
    }
    path
}

/// Simulate a dataset and return it with the true coefficient path.
pub fn simulate_dgp(config: &DgpConfig) -> Result<(Vec<SurvivalRecord>, DgpTruth)> {
    config.validate()?;
    let partition = config.partition()?;
    let path = simulate_path(config);
    let records = simulate_subjects(config, &partition, &path);
    let truth = DgpTruth {
        config: config.clone(),
        cuts: partition.cuts().to_vec(),
        path,
    };
    Ok((records, truth))
}

/// Subjects drawn under a fixed coefficient path.
pub fn simulate_subjects(config: &DgpConfig, partition: &IntervalPartition, path: &[f64]) -> Vec<SurvivalRecord> {
    let d = config.dim();
    let seed = StreamSeed::new(config.seed);
    let cuts = partition.cuts();
    let jn = partition.num_intervals();
    let width = (config.subjects.max(1) as f64).log10().floor() as usize + 1;
    (0..config.subjects)
        .map(|i| {
            let mut rng = seed.stream(Phase::Simulation, 1, i);
            let x: Vec<f64> = (0..config.covariates).map(|_| rng.sample(StandardNormal)).collect();
            let z = design_row(&x);
            let hazards: Vec<f64> = (0..jn).map(|j| dot(&z, &path[j * d..(j + 1) * d]).exp()).collect();
            let u: f64 = 1.0 - rng.random::<f64>();
            let (time, mut event) = match sample_piecewise_exponential(u, cuts, &hazards) {
                Some(t) => (t, true),
                None => (partition.horizon(), false),
            };
            if rng.random::<f64>() < config.censoring {
                event = false;
            }
            SurvivalRecord::new(format!("s{i:0width$}"), time, event, x)
        })
        .collect()
}

/// `count` covariate vectors `x ~ N(0, I_P)`.
pub fn draw_covariates(covariates: usize, count: usize, seed: StreamSeed) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let mut rng = seed.stream(Phase::Evaluation, 0, i);
            (0..covariates).map(|_| rng.sample(StandardNormal)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_inversion() {
        let u: f64 = 0.3;
        let t = sample_piecewise_exponential(u, &[0.0, 1e6], &[2.0]).unwrap();
        assert!((t + u.ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_segment_inversion() {
        let u = (-1.0f64).exp() * (-1.0f64).exp();
        let t = sample_piecewise_exponential(u, &[0.0, 1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert!((t - 1.5).abs() < 1e-12);
        assert_eq!(sample_piecewise_exponential(1e-9, &[0.0, 1.0], &[1.0]), None);
    }

    #[test]
    fn baseline_rule() {
        let b = Baseline::default();
        assert_eq!(b.value(1), -11.0);
        assert!((b.value(2) - (-11.0 + 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_censoring() {
        let cfg = DgpConfig {
            censoring: 1.5,
            ..DgpConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn truncated_subjects_are_censored_at_horizon() {
        let cfg = DgpConfig {
            subjects: 200,
            intervals: 2,
            seed: 3,
            ..DgpConfig::default()
        };
        let (records, truth) = simulate_dgp(&cfg).unwrap();
        assert_eq!(records.len(), 200);
        assert_eq!(truth.path.len(), 4);
        for r in &records {
            assert!(r.time <= 40.0);
            if r.time == 40.0 {
                assert!(!r.event);
            }
        }
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = DgpConfig {
            subjects: 50,
            seed: 9,
            ..DgpConfig::default()
        };
        assert_eq!(simulate_dgp(&cfg).unwrap(), simulate_dgp(&cfg).unwrap());
    }
}
