//! Bayesian dynamic survival analysis with piecewise exponential hazards.
//!
//! Coefficients follow a random walk whose variance is set by a discount
//! factor. The posterior over coefficient paths is approximated by a
//! two-filter particle smoother whose proposals come from linear-Bayes
//! moment matching.
//!
//! ```no_run
//! use pehsmooth_core::{
//!     build_partition, expand_exposures, run_two_filter_smoother, simulate_dgp, DgpConfig,
//!     DiscountPrior, PartitionPolicy, SmootherConfig,
//! };
//!
//! let (records, _truth) = simulate_dgp(&DgpConfig::default())?;
//! let partition = build_partition(&records, PartitionPolicy::Equidistant { width: 20.0 })?;
//! let panel = expand_exposures(&records, &partition)?;
//! let prior = DiscountPrior::new(0.45, panel.dim());
//! let output = run_two_filter_smoother(&panel, &partition, &prior, &SmootherConfig::new(2000, 2, 7))?;
//! println!("{}", output.smoothed_mean(1));
//! # Ok::<(), pehsmooth_core::Error>(())
//! ```

pub mod data;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod io;
pub mod model;
pub mod proposals;
pub mod rng;
pub mod sim;
pub mod smoother;

pub use data::{
    build_partition, expand_exposures, parse_survival_csv, read_survival_csv, train_test_split, write_survival_csv,
    CsvSchema, ExpandedPanel, IntervalPartition, IntervalSlice, PartitionPolicy, SurvivalData, SurvivalRecord,
};
pub use error::{Error, Result};
pub use eval::{
    edm, edm_against_truth, ess, posterior_expectation, predict_survival, waic, EdmDenominator, EdmOptions, EdmReport,
    EssReport, WaicReport,
};
pub use gaussian::{CholeskyFactor, GaussianSummary};
pub use model::{interval_log_likelihood, survival_probability, DiscountPrior};
pub use proposals::ForwardRecursion;
pub use rng::{Phase, StreamSeed};
pub use sim::{simulate_dgp, Baseline, DgpConfig, DgpTruth};
pub use smoother::{
    run_two_filter_smoother, FullPaths, ParticleSet, ProposalKind, SmootherConfig, SmootherDiagnostics, SmootherOutput,
};
