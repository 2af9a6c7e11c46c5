//! Survival data ingestion, interval partitions and exposure expansion.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Phase, StreamSeed};

/// One subject: observed time, event indicator and raw covariates `x`.
///
/// The design row `z = (1, x')` is built where it is needed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub id: String,
    pub time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

impl SurvivalRecord {
    pub fn new(id: impl Into<String>, time: f64, event: bool, covariates: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            time,
            event,
            covariates,
        }
    }

    /// `z = (1, x')`.
    pub fn design_row(&self) -> Vec<f64> {
        design_row(&self.covariates)
    }
}

pub fn design_row(covariates: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(covariates.len() + 1);
    z.push(1.0);
    z.extend_from_slice(covariates);
    z
}

/// Column mapping for survival CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub id: String,
    pub time: String,
    pub event: String,
    /// Covariate columns in model order. Empty means every remaining column.
    pub covariates: Vec<String>,
    /// Covariates to mean-center after loading.
    pub center: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            time: "time".into(),
            event: "event".into(),
            covariates: Vec::new(),
            center: Vec::new(),
        }
    }
}

/// Records together with the covariate names they were read with.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalData {
    pub covariate_names: Vec<String>,
    pub records: Vec<SurvivalRecord>,
}

impl SurvivalData {
    pub fn num_covariates(&self) -> usize {
        self.covariate_names.len()
    }
}

pub fn parse_survival_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SurvivalData> {
    let file = std::fs::File::open(path)?;
    read_survival_csv(file, schema)
}

pub fn read_survival_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<SurvivalData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let id_col = position(&schema.id)?;
    let time_col = position(&schema.time)?;
    let event_col = position(&schema.event)?;
    let covariate_names: Vec<String> = if schema.covariates.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| ![id_col, time_col, event_col].contains(i))
            .map(|(_, h)| h.to_string())
            .collect()
    } else {
        schema.covariates.clone()
    };
    let covariate_cols = covariate_names
        .iter()
        .map(|n| position(n))
        .collect::<Result<Vec<_>>>()?;
    for c in &schema.center {
        if !covariate_names.contains(c) {
            return Err(Error::Schema(format!(
                "centering requested for `{c}`, which is not a covariate"
            )));
        }
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |col: usize| row.get(col).unwrap_or("");
        let number = |col: usize, what: &str| -> Result<f64> {
            let raw = field(col);
            raw.parse::<f64>().map_err(|_| Error::Validation {
                row: row_no,
                message: format!("{what} `{raw}` is not a number"),
            })
        };
        let time = number(time_col, "time")?;
        if !(time >= 0.0) || !time.is_finite() {
            return Err(Error::Validation {
                row: row_no,
                message: format!("time {time} must be a finite nonnegative number"),
            });
        }
        let event = number(event_col, "event")?;
        let event = if event == 0.0 {
            false
        } else if event == 1.0 {
            true
        } else {
            return Err(Error::Validation {
                row: row_no,
                message: format!("event indicator {event} is not 0 or 1"),
            });
        };
        let mut covariates = Vec::with_capacity(covariate_cols.len());
        for (&col, name) in covariate_cols.iter().zip(&covariate_names) {
            let v = number(col, name)?;
            if !v.is_finite() {
                return Err(Error::Validation {
                    row: row_no,
                    message: format!("covariate `{name}` is missing or not finite"),
                });
            }
            covariates.push(v);
        }
        records.push(SurvivalRecord::new(field(id_col), time, event, covariates));
    }

    if !schema.center.is_empty() && !records.is_empty() {
        let index: HashMap<&str, usize> = covariate_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        for name in &schema.center {
            let k = index[name.as_str()];
            let mean = records.iter().map(|r| r.covariates[k]).sum::<f64>() / records.len() as f64;
            for r in &mut records {
                r.covariates[k] -= mean;
            }
        }
    }

    Ok(SurvivalData {
        covariate_names,
        records,
    })
}

/// Write records in the `id,time,event,covariates...` layout the reader accepts.
pub fn write_survival_csv<W: Write>(writer: W, covariate_names: &[String], records: &[SurvivalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "time".into(), "event".into()];
    header.extend(covariate_names.iter().cloned());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.id.clone(),
            format!("{}", r.time),
            if r.event { "1".into() } else { "0".into() },
        ];
        row.extend(r.covariates.iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// How the cut points of a partition are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PartitionPolicy {
    /// A cut at every distinct event time.
    EventTimes,
    /// Cuts at multiples of `width`.
    Equidistant { width: f64 },
    /// `events` events per interval, the remainder merged into the last one.
    EqualEvents { events: usize },
    /// Cuts supplied directly.
    Explicit,
}

/// Cut points `0 = tau_0 < tau_1 < ... < tau_J`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalPartition {
    cuts: Vec<f64>,
    policy: PartitionPolicy,
}

impl IntervalPartition {
    pub fn from_cuts(cuts: Vec<f64>) -> Result<Self> {
        Self::with_policy(cuts, PartitionPolicy::Explicit)
    }

    fn with_policy(cuts: Vec<f64>, policy: PartitionPolicy) -> Result<Self> {
        if cuts.len() < 2 {
            return Err(Error::Config("a partition needs at least one interval".into()));
        }
        if cuts[0] != 0.0 {
            return Err(Error::Config("the first cut must be 0".into()));
        }
        if cuts.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Config("cuts must be finite and strictly increasing".into()));
        }
        Ok(Self { cuts, policy })
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    pub fn policy(&self) -> PartitionPolicy {
        self.policy
    }

    pub fn num_intervals(&self) -> usize {
        self.cuts.len() - 1
    }

    /// `tau_J`.
    pub fn horizon(&self) -> f64 {
        *self.cuts.last().unwrap()
    }

    /// Lower and upper bound of interval `j` (0-based).
    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.cuts[j], self.cuts[j + 1])
    }

    pub fn width(&self, j: usize) -> f64 {
        self.cuts[j + 1] - self.cuts[j]
    }

    /// 0-based index of the interval a time `0 <= t <= tau_J` terminates in.
    /// A time lying exactly on a cut belongs to the earlier interval.
    pub fn terminal_interval(&self, t: f64) -> usize {
        let j = self.cuts[1..].partition_point(|&c| c < t);
        j.min(self.num_intervals() - 1)
    }
}

pub fn build_partition(records: &[SurvivalRecord], policy: PartitionPolicy) -> Result<IntervalPartition> {
    if records.is_empty() {
        return Err(Error::Config("cannot partition an empty dataset".into()));
    }
    let max_time = records.iter().map(|r| r.time).fold(0.0, f64::max);
    let mut event_times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    event_times.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let event_based_cuts = |step: usize| -> Result<Vec<f64>> {
        if event_times.is_empty() {
            return Err(Error::Config(
                "an event-based partition needs at least one event".into(),
            ));
        }
        if step == 0 {
            return Err(Error::Config("events per interval must be positive".into()));
        }
        if step > event_times.len() {
            return Err(Error::Config(format!(
                "{step} events per interval but only {} events observed",
                event_times.len()
            )));
        }
        let mut cuts = vec![0.0];
        for k in 1..=event_times.len() / step {
            let c = event_times[k * step - 1];
            if c > *cuts.last().unwrap() {
                cuts.push(c);
            }
        }
        let last = cuts.len() - 1;
        if last == 0 {
            // every counted event sits at time zero
            cuts.push(max_time.max(f64::MIN_POSITIVE));
        } else if max_time > cuts[last] {
            cuts[last] = max_time;
        }
        Ok(cuts)
    };

    let cuts = match policy {
        PartitionPolicy::EventTimes => {
            event_times.dedup();
            let mut cuts = vec![0.0];
            cuts.extend(event_times.iter().copied().filter(|&t| t > 0.0));
            if cuts.len() == 1 {
                if event_times.is_empty() {
                    return Err(Error::Config(
                        "an event-based partition needs at least one event".into(),
                    ));
                }
                cuts.push(max_time.max(f64::MIN_POSITIVE));
            } else {
                let last = cuts.len() - 1;
                if max_time > cuts[last] {
                    cuts[last] = max_time;
                }
            }
            cuts
        }
        PartitionPolicy::EqualEvents { events } => event_based_cuts(events)?,
        PartitionPolicy::Equidistant { width } => {
            if !(width > 0.0) || !width.is_finite() {
                return Err(Error::Config(format!("interval width {width} must be positive")));
            }
            let n = ((max_time / width).ceil() as usize).max(1);
            (0..=n).map(|k| k as f64 * width).collect()
        }
        PartitionPolicy::Explicit => {
            return Err(Error::Config(
                "explicit partitions are built with IntervalPartition::from_cuts".into(),
            ))
        }
    };
    IntervalPartition::with_policy(cuts, policy)
}

/// One subject's contribution to one interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exposure {
    /// 0-based interval index.
    pub interval: usize,
    pub exposure: f64,
    pub event: bool,
}

/// Split one subject's follow-up over the partition. Returns the stored
/// entries and whether the time had to be truncated at `tau_J`.
pub fn expand_subject(time: f64, event: bool, partition: &IntervalPartition) -> (Vec<Exposure>, bool) {
    let horizon = partition.horizon();
    let (time, event, truncated) = if time > horizon {
        (horizon, false, true)
    } else {
        (time, event, false)
    };
    let last = partition.terminal_interval(time);
    let mut out = Vec::with_capacity(last + 1);
    for j in 0..=last {
        let (lo, hi) = partition.bounds(j);
        let exposure = (time - lo).min(hi - lo).max(0.0);
        let d = event && j == last;
        if exposure > 0.0 || d {
            out.push(Exposure {
                interval: j,
                exposure,
                event: d,
            });
        }
    }
    (out, truncated)
}

/// At-risk entries of a single interval, in input order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntervalSlice {
    dim: usize,
    pub subjects: Vec<usize>,
    pub exposure: Vec<f64>,
    pub event: Vec<bool>,
    design: Vec<f64>,
}

impl IntervalSlice {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn push(&mut self, subject: usize, exposure: f64, event: bool, z: &[f64]) {
        assert_eq!(z.len(), self.dim, "design row has the wrong length");
        self.subjects.push(subject);
        self.exposure.push(exposure);
        self.event.push(event);
        self.design.extend_from_slice(z);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.exposure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exposure.is_empty()
    }

    /// Design row `z_i` of entry `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.dim..(i + 1) * self.dim]
    }

    pub fn num_events(&self) -> usize {
        self.event.iter().filter(|&&d| d).count()
    }

    /// A sub-slice of the given entry indices, preserving their order.
    pub fn select(&self, entries: &[usize]) -> Self {
        let mut s = Self::new(self.dim);
        for &i in entries {
            s.push(self.subjects[i], self.exposure[i], self.event[i], self.row(i));
        }
        s
    }
}

/// Interval-based data for all subjects.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpandedPanel {
    pub intervals: Vec<IntervalSlice>,
    /// Subjects whose time exceeded `tau_J`.
    pub truncated: usize,
    pub num_subjects: usize,
}

impl ExpandedPanel {
    pub fn dim(&self) -> usize {
        self.intervals.first().map(|s| s.dim()).unwrap_or(1)
    }

    pub fn num_intervals(&self) -> usize {
        self.intervals.len()
    }

    /// Risk-set size `n_j` (0-based `j`).
    pub fn risk_set(&self, j: usize) -> usize {
        self.intervals[j].len()
    }
}

pub fn expand_exposures(records: &[SurvivalRecord], partition: &IntervalPartition) -> Result<ExpandedPanel> {
    let p = records.first().map(|r| r.covariates.len()).unwrap_or(0);
    let mut intervals = vec![IntervalSlice::new(p + 1); partition.num_intervals()];
    let mut truncated = 0;
    for (i, r) in records.iter().enumerate() {
        if r.covariates.len() != p {
            return Err(Error::Schema(format!(
                "subject {} has {} covariates, expected {p}",
                r.id,
                r.covariates.len()
            )));
        }
        let (entries, cut) = expand_subject(r.time, r.event, partition);
        truncated += cut as usize;
        let z = r.design_row();
        for e in entries {
            intervals[e.interval].push(i, e.exposure, e.event, &z);
        }
    }
    if truncated > 0 {
        warn!("{truncated} subject(s) truncated at the partition horizon");
    }
    Ok(ExpandedPanel {
        intervals,
        truncated,
        num_subjects: records.len(),
    })
}

/// Random hold-out split: `round(fraction * n)` records go to the test set.
/// Both halves keep input order.
pub fn train_test_split(
    records: &[SurvivalRecord],
    fraction: f64,
    seed: StreamSeed,
) -> Result<(Vec<SurvivalRecord>, Vec<SurvivalRecord>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("test fraction {fraction} must lie in [0, 1)")));
    }
    let n_test = (fraction * records.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut seed.stream(Phase::Split, 0, 0));
    let mut is_test = vec![false; records.len()];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = records.iter().cloned().zip(is_test).partition(|(_, t)| *t);
    Ok((
        train.into_iter().map(|(r, _)| r).collect(),
        test.into_iter().map(|(r, _)| r).collect(),
    ))
}
