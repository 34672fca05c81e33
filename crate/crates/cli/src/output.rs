//! File writers and summary statistics.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use manifold_cca::detect::{CriterionSeries, DetectionEvent};
use manifold_cca::metrics::TrackingReport;
use serde::Serialize;

use crate::error::CliError;

pub const AGGREGATE_HEADER: [&str; 11] = [
    "t",
    "e_o_x_mean",
    "e_o_x_std",
    "e_o_y_mean",
    "e_o_y_std",
    "e_a_x_mean",
    "e_a_x_std",
    "e_a_y_mean",
    "e_a_y_std",
    "e_c_mean",
    "e_c_std",
];

pub fn trial_dir(out: &Path, trial: usize) -> PathBuf {
    out.join(format!("trial_{trial:03}"))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    let file =
        File::create(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-step mean and standard deviation across trials. Every report must
/// cover the same steps.
pub fn write_aggregate<W: Write>(out: W, reports: &[TrackingReport]) -> Result<(), CliError> {
    let first = reports
        .first()
        .ok_or_else(|| CliError::Runtime("no trials to aggregate".into()))?;
    if reports.iter().any(|r| r.len() != first.len()) {
        return Err(CliError::Runtime("trials have different lengths".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER).map_err(csv_err)?;
    for (i, row) in first.rows.iter().enumerate() {
        let mut record = vec![row.t.to_string()];
        let fields: [fn(&manifold_cca::metrics::TrackingRow) -> f64; 5] = [
            |r| r.e_o_x,
            |r| r.e_o_y,
            |r| r.e_a_x,
            |r| r.e_a_y,
            |r| r.e_c,
        ];
        for f in fields {
            let values: Vec<f64> = reports.iter().map(|r| f(&r.rows[i])).collect();
            let (mean, std) = mean_std(&values);
            record.push(format!("{mean:e}"));
            record.push(format!("{std:e}"));
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_criterion<W: Write>(out: W, series: &CriterionSeries) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "c"]).map_err(csv_err)?;
    for (i, c) in series.values.iter().enumerate() {
        w.write_record([(series.start + i).to_string(), format!("{c:e}")])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events<W: Write>(out: W, events: &[DetectionEvent]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "c_value", "threshold"]).map_err(csv_err)?;
    for e in events {
        w.write_record([
            e.t.to_string(),
            format!("{:e}", e.c_value),
            format!("{:e}", e.threshold),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Nearest-rank percentiles of a timing sample, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub mean: f64,
    pub count: usize,
}

impl Percentiles {
    pub fn of(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |q: f64| {
            let k = (q * sorted.len() as f64).ceil() as usize;
            sorted[k.clamp(1, sorted.len()) - 1]
        };
        Some(Self {
            p50: rank(0.50),
            p90: rank(0.90),
            p99: rank(0.99),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            count: sorted.len(),
        })
    }
}
