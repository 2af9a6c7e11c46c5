//! Command-line front end: simulation, fitting, WAIC grids, prediction and
//! proposal benchmarks.

pub mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use pehsmooth_core::eval::process_cpu_seconds;
use pehsmooth_core::io::{
    coefficient_names, read_path_dump, trajectory, write_path_dump, write_trajectory_csv, FitReport, Timing,
};
use pehsmooth_core::*;
use serde::Serialize;

pub use config::{Preset, RunConfig};

/// Exit code 2 for usage errors, 1 for everything else.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "pehsmooth",
    version,
    about = "Particle smoothing for piecewise exponential hazard models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset and its true coefficient path.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Output CSV; the truth is written next to it as `<stem>.truth.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the smoother and write the trajectory, report and path dump.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Skip the binary path dump.
        #[arg(long)]
        no_paths: bool,
    },
    /// Held-out WAIC for every (phi, partition) cell.
    WaicGrid {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        fit: FitArgs,
        /// Discount factors, one table row each.
        #[arg(long, value_delimiter = ',')]
        phis: Vec<f64>,
        /// Events per interval for equal-events partitions, one column each.
        #[arg(long = "events-grid", value_delimiter = ',')]
        events_grid: Vec<usize>,
        /// Interval widths for equidistant partitions, one column each.
        #[arg(long = "widths-grid", value_delimiter = ',')]
        widths_grid: Vec<f64>,
        #[arg(long)]
        test_fraction: Option<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Posterior predictive survival for one covariate vector.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory written by `fit`.
        #[arg(long)]
        fit_dir: Option<PathBuf>,
        /// Covariate values in model order.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Vec<f64>,
        /// Evaluation times; defaults to the cut points.
        #[arg(long, value_delimiter = ',')]
        times: Vec<f64>,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linear-Bayes against bootstrap proposals: ESS, ESS per CPU second and timing.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Replicates `M` per method.
        #[arg(long)]
        m: Option<usize>,
        /// Particles `K` per run.
        #[arg(long)]
        particles: Option<usize>,
        /// Dataset sizes for the timing table.
        #[arg(long = "sizes", value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Omit timings so outputs are byte-identical across runs.
    #[arg(long)]
    pub deterministic: bool,
    /// Worker threads.
    #[arg(long, env = "PEHSMOOTH_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Print the merged configuration as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Number of covariates `P`.
    #[arg(long)]
    pub p: Option<usize>,
    /// Number of subjects.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of intervals `J`.
    #[arg(long)]
    pub j: Option<usize>,
    #[arg(long)]
    pub interval_width: Option<f64>,
    /// Censoring proportion.
    #[arg(long)]
    pub pc: Option<f64>,
    #[arg(long)]
    pub rw_sd: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub id_col: Option<String>,
    #[arg(long)]
    pub time_col: Option<String>,
    #[arg(long)]
    pub event_col: Option<String>,
    /// Covariate columns in model order; all remaining columns when absent.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Covariates to mean-center.
    #[arg(long, value_delimiter = ',')]
    pub center: Vec<String>,
    /// Discount factor.
    #[arg(long, allow_hyphen_values = true)]
    pub phi: Option<f64>,
    /// Filter particles `K`.
    #[arg(long, short = 'k')]
    pub particles: Option<usize>,
    /// Smoothing particles per filter particle `R`.
    #[arg(long, short = 'r')]
    pub smoothing_factor: Option<usize>,
    #[arg(long, value_enum)]
    pub proposal: Option<ProposalArg>,
    #[arg(long, value_enum)]
    pub partition: Option<PartitionArg>,
    /// Width for equidistant partitions.
    #[arg(long)]
    pub width: Option<f64>,
    /// Events per interval for equal-events partitions.
    #[arg(long)]
    pub events: Option<usize>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ProposalArg {
    LinearBayes,
    Bootstrap,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum PartitionArg {
    Equidistant,
    EqualEvents,
    EventTimes,
}

impl CommonArgs {
    fn merge(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(preset) = self.preset {
            cfg.apply_preset(preset);
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        Ok(cfg)
    }
}

impl SimArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.simulate;
        s.covariates = self.p.unwrap_or(s.covariates);
        s.subjects = self.n.unwrap_or(s.subjects);
        s.intervals = self.j.unwrap_or(s.intervals);
        s.interval_width = self.interval_width.unwrap_or(s.interval_width);
        s.censoring = self.pc.unwrap_or(s.censoring);
        s.rw_sd = self.rw_sd.unwrap_or(s.rw_sd);
    }
}

impl FitArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        let schema = &mut cfg.schema;
        if let Some(c) = &self.id_col {
            schema.id = c.clone();
        }
        if let Some(c) = &self.time_col {
            schema.time = c.clone();
        }
        if let Some(c) = &self.event_col {
            schema.event = c.clone();
        }
        if !self.covariates.is_empty() {
            schema.covariates = self.covariates.clone();
        }
        if !self.center.is_empty() {
            schema.center = self.center.clone();
        }
        cfg.phi = self.phi.unwrap_or(cfg.phi);
        cfg.particles = self.particles.unwrap_or(cfg.particles);
        cfg.smoothing_factor = self.smoothing_factor.unwrap_or(cfg.smoothing_factor);
        if let Some(p) = self.proposal {
            cfg.proposal = match p {
                ProposalArg::LinearBayes => ProposalKind::LinearBayes,
                ProposalArg::Bootstrap => ProposalKind::Bootstrap,
            };
        }
        let width = |cfg: &RunConfig| match cfg.partition {
            PartitionPolicy::Equidistant { width } => width,
            _ => 20.0,
        };
        let events = |cfg: &RunConfig| match cfg.partition {
            PartitionPolicy::EqualEvents { events } => events,
            _ => 30,
        };
        let kind = self.partition.or(match (self.width, self.events) {
            (Some(_), None) => Some(PartitionArg::Equidistant),
            (None, Some(_)) => Some(PartitionArg::EqualEvents),
            _ => None,
        });
        cfg.partition = match kind {
            Some(PartitionArg::Equidistant) => PartitionPolicy::Equidistant {
                width: self.width.unwrap_or_else(|| width(cfg)),
            },
            Some(PartitionArg::EqualEvents) => PartitionPolicy::EqualEvents {
                events: self.events.unwrap_or_else(|| events(cfg)),
            },
            Some(PartitionArg::EventTimes) => PartitionPolicy::EventTimes,
            None => cfg.partition,
        };
    }
}

fn dump(cfg: &RunConfig) -> CliResult<()> {
    let text = serde_json::to_string_pretty(cfg).map_err(|e| anyhow!(e))?;
    println!("{text}");
    Ok(())
}

fn configure_threads(cfg: &RunConfig) {
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("thread pool already configured: {e}");
        }
    }
}

/// Parse-free entry point used by `main` and the tests.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { common, sim, out } => {
            let mut cfg = common.merge()?;
            sim.apply(&mut cfg);
            if out.is_some() {
                cfg.out = out;
            }
            cfg.simulate.seed = cfg.seed;
            cfg.simulate.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            cfg.validate()?;
            if common.dump_config {
                return dump(&cfg);
            }
            configure_threads(&cfg);
            cmd_simulate(&cfg)
        }
        Command::Fit {
            common,
            fit,
            out_dir,
            no_paths,
        } => {
            let mut cfg = common.merge()?;
            fit.apply(&mut cfg);
            if out_dir.is_some() {
                cfg.out_dir = out_dir;
            }
            if no_paths {
                cfg.write_paths = false;
            }
            cfg.validate()?;
            if common.dump_config {
                return dump(&cfg);
            }
            configure_threads(&cfg);
            cmd_fit(&cfg)
        }
        Command::WaicGrid {
            common,
            fit,
            phis,
            events_grid,
            widths_grid,
            test_fraction,
            out_dir,
        } => {
            let mut cfg = common.merge()?;
            fit.apply(&mut cfg);
            if !phis.is_empty() {
                cfg.grid.phis = phis;
            }
            if !events_grid.is_empty() || !widths_grid.is_empty() {
                cfg.grid.partitions = events_grid
                    .into_iter()
                    .map(|events| PartitionPolicy::EqualEvents { events })
                    .chain(
                        widths_grid
                            .into_iter()
                            .map(|width| PartitionPolicy::Equidistant { width }),
                    )
                    .collect();
            }
            cfg.test_fraction = test_fraction.unwrap_or(cfg.test_fraction);
            if out_dir.is_some() {
                cfg.out_dir = out_dir;
            }
            cfg.validate()?;
            validate_grid(&cfg)?;
            if common.dump_config {
                return dump(&cfg);
            }
            configure_threads(&cfg);
            cmd_waic_grid(&cfg)
        }
        Command::Predict {
            common,
            fit_dir,
            x,
            times,
            out,
        } => {
            let mut cfg = common.merge()?;
            if fit_dir.is_some() {
                cfg.predict.fit_dir = fit_dir;
            }
            if !x.is_empty() {
                cfg.predict.covariates = x;
            }
            if !times.is_empty() {
                cfg.predict.times = times;
            }
            if out.is_some() {
                cfg.out = out;
            }
            cfg.validate()?;
            if common.dump_config {
                return dump(&cfg);
            }
            configure_threads(&cfg);
            cmd_predict(&cfg)
        }
        Command::Bench {
            common,
            sim,
            m,
            particles,
            sizes,
            out_dir,
        } => {
            let mut cfg = common.merge()?;
            sim.apply(&mut cfg);
            cfg.bench.replicates = m.unwrap_or(cfg.bench.replicates);
            cfg.bench.particles = particles.unwrap_or(cfg.bench.particles);
            if !sizes.is_empty() {
                cfg.bench.subjects = sizes;
            } else if let Some(n) = sim.n {
                cfg.bench.subjects = vec![n];
            }
            if out_dir.is_some() {
                cfg.out_dir = out_dir;
            }
            cfg.validate()?;
            if cfg.bench.replicates < 2 {
                return Err(CliError::Usage(format!(
                    "bench needs at least two replicates, got {}",
                    cfg.bench.replicates
                )));
            }
            if cfg.bench.particles < 2 || cfg.bench.subjects.is_empty() {
                return Err(CliError::Usage(
                    "bench needs K >= 2 and at least one dataset size".into(),
                ));
            }
            cfg.simulate.seed = cfg.seed;
            cfg.simulate.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            if common.dump_config {
                return dump(&cfg);
            }
            configure_threads(&cfg);
            cmd_bench(&cfg)
        }
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required option {flag}")))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| anyhow!(e))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> CliResult<&Path> {
    let dir = require(&cfg.out_dir, "--out-dir")?;
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

pub fn truth_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.truth.json"))
}

fn cmd_simulate(cfg: &RunConfig) -> CliResult<()> {
    let out = require(&cfg.out, "--out")?;
    let (records, truth) = simulate_dgp(&cfg.simulate)?;
    let names: Vec<String> = (1..=cfg.simulate.covariates).map(|i| format!("x{i}")).collect();
    let mut w = create(out)?;
    write_survival_csv(&mut w, &names, &records)?;
    w.flush()?;
    write_json(&truth_path(out), &truth)?;
    info!("wrote {} subjects to {}", records.len(), out.display());
    Ok(())
}

fn load_data(cfg: &RunConfig) -> CliResult<SurvivalData> {
    let path = require(&cfg.data, "--data")?;
    parse_survival_csv(path, &cfg.schema)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Runtime)
}

struct Fitted {
    partition: IntervalPartition,
    panel: ExpandedPanel,
    output: SmootherOutput,
    timing: Timing,
}

fn fit_records(records: &[SurvivalRecord], policy: PartitionPolicy, phi: f64, cfg: &RunConfig) -> CliResult<Fitted> {
    let partition = build_partition(records, policy)?;
    let panel = expand_exposures(records, &partition)?;
    if panel.truncated > 0 {
        warn!(
            "{} subjects followed beyond tau_J = {} were truncated",
            panel.truncated,
            partition.horizon()
        );
    }
    let prior = DiscountPrior::new(phi, panel.dim());
    let mut smoother = SmootherConfig::new(cfg.particles, cfg.smoothing_factor, cfg.seed);
    smoother.proposal = cfg.proposal;
    let wall = Instant::now();
    let cpu = process_cpu_seconds();
    let output = run_two_filter_smoother(&panel, &partition, &prior, &smoother)?;
    let timing = Timing {
        wall_seconds: wall.elapsed().as_secs_f64(),
        cpu_seconds: process_cpu_seconds() - cpu,
    };
    let degenerate = output.diagnostics.degenerate_intervals();
    if degenerate > 0 {
        warn!("{degenerate} filter steps collapsed onto a single particle");
    }
    Ok(Fitted {
        partition,
        panel,
        output,
        timing,
    })
}

fn cmd_fit(cfg: &RunConfig) -> CliResult<()> {
    let data = load_data(cfg)?;
    let dir = out_dir(cfg)?;
    let fitted = fit_records(&data.records, cfg.partition, cfg.phi, cfg)?;
    let out = &fitted.output;
    let names = coefficient_names(&data.covariate_names);
    let mut w = create(&dir.join("trajectory.csv"))?;
    write_trajectory_csv(&mut w, &names, &trajectory(out, &fitted.partition))?;
    let report = FitReport {
        covariate_names: data.covariate_names.clone(),
        cuts: fitted.partition.cuts().to_vec(),
        policy: cfg.partition,
        phi: cfg.phi,
        particles: cfg.particles,
        smoothing_factor: cfg.smoothing_factor,
        seed: cfg.seed,
        proposal: cfg.proposal,
        num_subjects: fitted.panel.num_subjects,
        truncated_subjects: fitted.panel.truncated,
        smoothed: out.smoothed_summaries.clone(),
        filtered: out.forward_summaries.clone(),
        transition_covs: out.transition_covs.clone(),
        diagnostics: out.diagnostics.clone(),
        timing: (!cfg.deterministic).then_some(fitted.timing),
    };
    write_json(&dir.join("fit.json"), &report)?;
    if cfg.write_paths {
        let mut w = create(&dir.join("paths.bin"))?;
        write_path_dump(&mut w, &out.paths)?;
    }
    info!(
        "fitted {} intervals for {} subjects in {:.1}s",
        fitted.partition.num_intervals(),
        fitted.panel.num_subjects,
        fitted.timing.wall_seconds
    );
    Ok(())
}

fn validate_grid(cfg: &RunConfig) -> CliResult<()> {
    if cfg.grid.phis.is_empty() {
        return Err(CliError::Usage(
            "empty WAIC grid: give at least one discount factor with --phis".into(),
        ));
    }
    for &phi in &cfg.grid.phis {
        if !(phi > 0.0 && phi < 1.0) {
            return Err(CliError::Usage(format!("grid phi must lie in (0, 1), got {phi}")));
        }
    }
    if cfg.test_fraction <= 0.0 {
        return Err(CliError::Usage("WAIC needs a positive test fraction".into()));
    }
    Ok(())
}

pub fn partition_label(policy: &PartitionPolicy) -> String {
    match policy {
        PartitionPolicy::EqualEvents { events } => format!("E={events}"),
        PartitionPolicy::Equidistant { width } => format!("width={width}"),
        PartitionPolicy::EventTimes => "event-times".into(),
        PartitionPolicy::Explicit => "explicit".into(),
    }
}

#[derive(Serialize)]
struct WaicCell {
    phi: f64,
    partition: PartitionPolicy,
    intervals: usize,
    report: WaicReport,
}

fn cmd_waic_grid(cfg: &RunConfig) -> CliResult<()> {
    let data = load_data(cfg)?;
    let dir = out_dir(cfg)?;
    let (train, test) = train_test_split(&data.records, cfg.test_fraction, StreamSeed::new(cfg.seed))?;
    if test.is_empty() || train.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "the split left {} training and {} test subjects",
            train.len(),
            test.len()
        )));
    }
    let partitions = if cfg.grid.partitions.is_empty() {
        vec![cfg.partition]
    } else {
        cfg.grid.partitions.clone()
    };
    let mut cells = Vec::new();
    let mut table = csv::Writer::from_writer(create(&dir.join("waic_grid.csv"))?);
    let mut header = vec!["phi".to_string()];
    header.extend(partitions.iter().map(partition_label));
    table.write_record(&header).map_err(|e| anyhow!(e))?;
    for &phi in &cfg.grid.phis {
        let mut row = vec![phi.to_string()];
        for &policy in &partitions {
            let fitted = fit_records(&train, policy, phi, cfg)?;
            let report = waic(&test, &fitted.output.paths, &fitted.partition)?;
            info!("phi={phi} {}: WAIC {:.2}", partition_label(&policy), report.waic);
            row.push(report.waic.to_string());
            cells.push(WaicCell {
                phi,
                partition: policy,
                intervals: fitted.partition.num_intervals(),
                report,
            });
        }
        table.write_record(&row).map_err(|e| anyhow!(e))?;
    }
    table.flush()?;
    write_json(&dir.join("waic_grid.json"), &cells)?;
    Ok(())
}

fn cmd_predict(cfg: &RunConfig) -> CliResult<()> {
    let dir = require(&cfg.predict.fit_dir, "--fit-dir")?;
    let text =
        std::fs::read_to_string(dir.join("fit.json")).with_context(|| format!("reading {}/fit.json", dir.display()))?;
    let report: FitReport = serde_json::from_str(&text).map_err(|e| anyhow!("invalid fit.json: {e}"))?;
    let x = &cfg.predict.covariates;
    if x.len() != report.covariate_names.len() {
        return Err(CliError::Usage(format!(
            "the fit has {} covariates ({}), got {} values",
            report.covariate_names.len(),
            report.covariate_names.join(", "),
            x.len()
        )));
    }
    let partition = report.partition()?;
    let file = File::open(dir.join("paths.bin")).with_context(|| format!("reading {}/paths.bin", dir.display()))?;
    let paths = read_path_dump(std::io::BufReader::new(file), report.dim(), report.num_intervals())?;
    let z = data::design_row(x);
    let times = if cfg.predict.times.is_empty() {
        partition.cuts().to_vec()
    } else {
        cfg.predict.times.clone()
    };
    let sink: Box<dyn Write> = match &cfg.out {
        Some(path) => Box::new(create(path)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["time", "survival"]).map_err(|e| anyhow!(e))?;
    for t in times {
        let s = predict_survival(&paths, &partition, &z, t).map_err(|e| CliError::Usage(e.to_string()))?;
        w.write_record([t.to_string(), s.to_string()]).map_err(|e| anyhow!(e))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct BenchEntry {
    subjects: usize,
    proposal: ProposalKind,
    report: EssReport,
}

struct MethodRuns {
    means: Vec<Vec<Vec<f64>>>,
    variances: Vec<Vec<Vec<f64>>>,
    cpu: Vec<f64>,
    wall: Vec<f64>,
}

fn bench_method(
    panel: &ExpandedPanel,
    partition: &IntervalPartition,
    proposal: ProposalKind,
    cfg: &RunConfig,
) -> CliResult<MethodRuns> {
    let prior = DiscountPrior::new(cfg.phi, panel.dim());
    let mut runs = MethodRuns {
        means: Vec::new(),
        variances: Vec::new(),
        cpu: Vec::new(),
        wall: Vec::new(),
    };
    for m in 0..cfg.bench.replicates {
        let mut smoother = SmootherConfig::new(cfg.bench.particles, cfg.smoothing_factor, 0);
        smoother.seed = StreamSeed::new(cfg.seed).child(m as u64);
        smoother.proposal = proposal;
        let wall = Instant::now();
        let cpu = process_cpu_seconds();
        let out = run_two_filter_smoother(panel, partition, &prior, &smoother)?;
        runs.cpu.push(process_cpu_seconds() - cpu);
        runs.wall.push(wall.elapsed().as_secs_f64());
        runs.means.push(
            out.smoothed_summaries
                .iter()
                .map(|s| s.mean.iter().copied().collect())
                .collect(),
        );
        runs.variances.push(
            out.smoothed_summaries
                .iter()
                .map(|s| (0..s.dim()).map(|c| s.cov[(c, c)]).collect())
                .collect(),
        );
    }
    Ok(runs)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cmd_bench(cfg: &RunConfig) -> CliResult<()> {
    let dir = out_dir(cfg)?;
    let methods = [ProposalKind::LinearBayes, ProposalKind::Bootstrap];
    let mut entries = Vec::new();
    let mut ratio = csv::Writer::from_writer(create(&dir.join("ess_ratio.csv"))?);
    ratio
        .write_record([
            "subjects",
            "interval",
            "coefficient",
            "linear_bayes",
            "bootstrap",
            "ratio",
        ])
        .map_err(|e| anyhow!(e))?;
    let mut timing = csv::Writer::from_writer(create(&dir.join("timing.csv"))?);
    timing
        .write_record(["subjects", "proposal", "replicates", "wall_seconds", "cpu_seconds"])
        .map_err(|e| anyhow!(e))?;
    for &subjects in &cfg.bench.subjects {
        let mut dgp = cfg.simulate.clone();
        dgp.subjects = subjects;
        let (records, _) = simulate_dgp(&dgp)?;
        let partition = dgp.partition()?;
        let panel = expand_exposures(&records, &partition)?;
        let mut reports = Vec::new();
        for proposal in methods {
            let runs = bench_method(&panel, &partition, proposal, cfg)?;
            // Deterministic mode charges one unit of time per run.
            let cost = if cfg.deterministic {
                vec![1.0; runs.cpu.len()]
            } else {
                runs.cpu.clone()
            };
            let report = ess(&runs.means, &runs.variances, &cost)?;
            let (wall, cpu) = if cfg.deterministic {
                (String::new(), String::new())
            } else {
                (mean(&runs.wall).to_string(), mean(&runs.cpu).to_string())
            };
            let label = serde_json::to_value(proposal).map_err(|e| anyhow!(e))?;
            timing
                .write_record([
                    subjects.to_string(),
                    label.as_str().unwrap_or_default().to_string(),
                    cfg.bench.replicates.to_string(),
                    wall,
                    cpu,
                ])
                .map_err(|e| anyhow!(e))?;
            reports.push(report.clone());
            entries.push(BenchEntry {
                subjects,
                proposal,
                report,
            });
        }
        for cell in &reports[0].cells {
            let other = reports[1].cell(cell.interval, cell.coefficient);
            ratio
                .write_record([
                    subjects.to_string(),
                    cell.interval.to_string(),
                    cell.coefficient.to_string(),
                    cell.ess_per_second.to_string(),
                    other.ess_per_second.to_string(),
                    (cell.ess_per_second / other.ess_per_second).to_string(),
                ])
                .map_err(|e| anyhow!(e))?;
        }
    }
    ratio.flush()?;
    timing.flush()?;
    write_json(&dir.join("ess_report.json"), &entries)?;
    Ok(())
}
