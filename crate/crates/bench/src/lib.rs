//! Fixtures shared by the criterion benchmarks.

use pehsmooth_core::{expand_exposures, simulate_dgp, DgpConfig, ExpandedPanel, IntervalPartition};

/// A simulated panel on the equidistant partition of its generating process.
pub fn fixture(covariates: usize, subjects: usize, intervals: usize, seed: u64) -> (ExpandedPanel, IntervalPartition) {
    let cfg = DgpConfig {
        covariates,
        subjects,
        intervals,
        seed,
        ..DgpConfig::default()
    };
    let (records, _) = simulate_dgp(&cfg).expect("valid simulation settings");
    let partition = cfg.partition().expect("equidistant partition");
    let panel = expand_exposures(&records, &partition).expect("expansion");
    (panel, partition)
}
