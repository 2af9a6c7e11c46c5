//! Run configuration: defaults, then an optional preset, then a JSON file,
//! then command-line flags.

use std::path::{Path, PathBuf};

use pehsmooth_core::{CsvSchema, DgpConfig, PartitionPolicy, ProposalKind};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Named parameter bundles applied beneath explicit settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `K = 10000`, equal-events partition with 30 events, `phi = 0.5`.
    Trace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub threads: Option<usize>,
    pub preset: Option<Preset>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub schema: CsvSchema,
    pub phi: f64,
    pub particles: usize,
    pub smoothing_factor: usize,
    pub proposal: ProposalKind,
    pub partition: PartitionPolicy,
    pub test_fraction: f64,
    pub write_paths: bool,
    pub simulate: DgpConfig,
    pub grid: GridConfig,
    pub predict: PredictConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            deterministic: false,
            threads: None,
            preset: None,
            data: None,
            out: None,
            out_dir: None,
            schema: CsvSchema::default(),
            phi: 0.45,
            particles: 2000,
            smoothing_factor: 2,
            proposal: ProposalKind::LinearBayes,
            partition: PartitionPolicy::Equidistant { width: 20.0 },
            test_fraction: 0.2,
            write_paths: true,
            simulate: DgpConfig::default(),
            grid: GridConfig::default(),
            predict: PredictConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Cells of a WAIC table: rows are discount factors, columns partitions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub phis: Vec<f64>,
    pub partitions: Vec<PartitionPolicy>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub fit_dir: Option<PathBuf>,
    /// Covariate values of the subject, in model order.
    pub covariates: Vec<f64>,
    /// Empty means the partition's cut points.
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub replicates: usize,
    pub particles: usize,
    /// Dataset sizes for the timing table; ESS is reported for each.
    pub subjects: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            replicates: 20,
            particles: 5000,
            subjects: vec![1000],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        self.preset = Some(preset);
        match preset {
            Preset::Trace => {
                self.particles = 10_000;
                self.partition = PartitionPolicy::EqualEvents { events: 30 };
                self.phi = 0.5;
            }
        }
    }

    /// Checks shared by every command.
    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return usage(format!("phi must lie in (0, 1), got {}", self.phi));
        }
        if self.particles < 2 {
            return usage(format!("at least two particles are required, got {}", self.particles));
        }
        if self.smoothing_factor < 1 {
            return usage("smoothing factor R must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return usage(format!("test fraction must lie in [0, 1), got {}", self.test_fraction));
        }
        if self.threads == Some(0) {
            return usage("thread count must be positive".into());
        }
        match self.partition {
            PartitionPolicy::Equidistant { width } if !(width > 0.0) || !width.is_finite() => {
                return usage(format!("interval width must be positive, got {width}"));
            }
            PartitionPolicy::EqualEvents { events: 0 } => {
                return usage("events per interval must be positive".into());
            }
            PartitionPolicy::Explicit => {
                return usage("explicit cut points cannot be read from a run configuration".into());
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!((cfg.phi, cfg.particles, cfg.smoothing_factor), (0.45, 2000, 2));
    }

    #[test]
    fn out_of_range_values_are_usage_errors() {
        for cfg in [
            RunConfig {
                phi: 1.0,
                ..RunConfig::default()
            },
            RunConfig {
                particles: 1,
                ..RunConfig::default()
            },
            RunConfig {
                smoothing_factor: 0,
                ..RunConfig::default()
            },
            RunConfig {
                test_fraction: 1.0,
                ..RunConfig::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(CliError::Usage(_))));
        }
    }

    #[test]
    fn trace_preset() {
        let mut cfg = RunConfig::default();
        cfg.apply_preset(Preset::Trace);
        assert_eq!(cfg.particles, 10_000);
        assert_eq!(cfg.phi, 0.5);
        assert_eq!(cfg.partition, PartitionPolicy::EqualEvents { events: 30 });
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
