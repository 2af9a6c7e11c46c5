//! Serialized smoother output: trajectory CSV, fit JSON and the binary path dump.
//!
//! The path dump is a flat sequence of little-endian `f64` values, one row per
//! full path: the normalized weight followed by the `J * (P + 1)` coefficients
//! in interval-major order.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{IntervalPartition, PartitionPolicy};
use crate::error::{Error, Result};
use crate::gaussian::GaussianSummary;
use crate::smoother::{weighted_quantile, FullPaths, ProposalKind, SmootherDiagnostics, SmootherOutput};

/// Serde adapter writing non-finite floats as the strings `inf`, `-inf`, `nan`.
pub mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

/// Posterior summary of one coefficient at one interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub interval: usize,
    pub start: f64,
    pub end: f64,
    pub coefficients: Vec<TrajectoryPoint>,
}

/// Per-interval smoothed means with 2.5% and 97.5% weighted quantiles.
pub fn trajectory(output: &SmootherOutput, partition: &IntervalPartition) -> Vec<TrajectoryRow> {
    (1..=output.num_intervals)
        .map(|j| {
            let set = output.smoothing_set(j);
            let w = set.weights();
            let mean = output.smoothed_mean(j);
            let coefficients = (0..output.dim)
                .map(|c| {
                    let values = set.coordinate(c);
                    TrajectoryPoint {
                        mean: mean[c],
                        lower: weighted_quantile(&values, &w, 0.025),
                        upper: weighted_quantile(&values, &w, 0.975),
                    }
                })
                .collect();
            let (start, end) = partition.bounds(j - 1);
            TrajectoryRow {
                interval: j,
                start,
                end,
                coefficients,
            }
        })
        .collect()
}

/// Write trajectory rows with columns `interval,start,end` then
/// `<name>_mean,<name>_lower,<name>_upper` per coefficient.
pub fn write_trajectory_csv<W: Write>(writer: W, names: &[String], rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["interval".to_string(), "start".into(), "end".into()];
    for n in names {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_lower"));
        header.push(format!("{n}_upper"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.interval.to_string(), r.start.to_string(), r.end.to_string()];
        for p in &r.coefficients {
            rec.push(p.mean.to_string());
            rec.push(p.lower.to_string());
            rec.push(p.upper.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Coefficient names: `intercept` followed by the covariate names.
pub fn coefficient_names(covariates: &[String]) -> Vec<String> {
    std::iter::once("intercept".to_string())
        .chain(covariates.iter().cloned())
        .collect()
}

/// Machine-readable summary of a fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub covariate_names: Vec<String>,
    pub cuts: Vec<f64>,
    pub policy: PartitionPolicy,
    pub phi: f64,
    pub particles: usize,
    pub smoothing_factor: usize,
    pub seed: u64,
    pub proposal: ProposalKind,
    pub num_subjects: usize,
    pub truncated_subjects: usize,
    pub smoothed: Vec<GaussianSummary>,
    pub filtered: Vec<GaussianSummary>,
    pub transition_covs: Vec<DMatrix<f64>>,
    pub diagnostics: SmootherDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub cpu_seconds: f64,
}

impl FitReport {
    pub fn dim(&self) -> usize {
        self.covariate_names.len() + 1
    }

    pub fn num_intervals(&self) -> usize {
        self.cuts.len() - 1
    }

    pub fn partition(&self) -> Result<IntervalPartition> {
        IntervalPartition::from_cuts(self.cuts.clone())
    }
}

pub fn write_path_dump<W: Write>(mut writer: W, paths: &FullPaths) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * (paths.values.len() + paths.len()));
    for s in 0..paths.len() {
        buf.extend_from_slice(&paths.log_weights[s].exp().to_le_bytes());
        for v in paths.path(s) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    writer.write_all(&buf)?;
    writer.flush()?;
    Ok(())
}

pub fn read_path_dump<R: Read>(mut reader: R, dim: usize, num_intervals: usize) -> Result<FullPaths> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let row = 1 + dim * num_intervals;
    if bytes.len() % (8 * row) != 0 || bytes.is_empty() {
        return Err(Error::Schema(format!(
            "path dump has {} bytes, not a positive multiple of {} rows of {row} values",
            bytes.len(),
            8
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut log_weights = Vec::with_capacity(values.len() / row);
    let mut flat = Vec::with_capacity(values.len());
    for r in values.chunks_exact(row) {
        log_weights.push(r[0].ln());
        flat.extend_from_slice(&r[1..]);
    }
    Ok(FullPaths {
        dim,
        num_intervals,
        values: flat,
        log_weights,
    })
}
