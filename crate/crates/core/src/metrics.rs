//! Tracking metrics against the exact batch solution.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::adaptive::AdaptiveCca;
use crate::batch::{solve_batch, BatchSolution};
use crate::error::{check_dims, CcaError, Result};

/// `‖WᵀCW − I_p‖²_F`.
pub fn orthonormality_error(w: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    check_dims("orthonormality_error", (c.nrows(), w.ncols()), w.shape())?;
    check_dims("orthonormality_error C", (w.nrows(), w.nrows()), c.shape())?;
    let p = w.ncols();
    Ok((w.transpose() * c * w - DMatrix::<f64>::identity(p, p)).norm_squared())
}

/// `‖CWWᵀ − CW_bW_bᵀ‖²_F / (2p)`, distance between the oblique projectors
/// of two bases.
pub fn projector_distance(
    w: &DMatrix<f64>,
    w_batch: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<f64> {
    check_dims("projector_distance", w.shape(), w_batch.shape())?;
    check_dims("projector_distance C", (w.nrows(), w.nrows()), c.shape())?;
    let p = w.ncols();
    let diff = w * w.transpose() - w_batch * w_batch.transpose();
    Ok((c * diff).norm_squared() / (2.0 * p as f64))
}

pub fn cost_ratio(adaptive_cost: f64, batch_cost: f64) -> Result<f64> {
    if batch_cost == 0.0 || !batch_cost.is_finite() {
        return Err(CcaError::InvalidArgument(format!(
            "cost ratio undefined for batch cost {batch_cost}"
        )));
    }
    Ok(adaptive_cost / batch_cost)
}

/// Metrics for one processed sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingRow {
    pub t: u64,
    pub e_o_x: f64,
    pub e_o_y: f64,
    pub e_a_x: f64,
    pub e_a_y: f64,
    pub e_c: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackingReport {
    pub rows: Vec<TrackingRow>,
    /// Wall time of each adaptive step, in seconds.
    pub step_seconds: Vec<f64>,
}

pub const REPORT_HEADER: [&str; 6] = ["t", "e_o_x", "e_o_y", "e_a_x", "e_a_y", "e_c"];

impl TrackingReport {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn max_orthonormality_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.e_o_x.max(r.e_o_y))
            .fold(0.0, f64::max)
    }

    /// Mean of `e_c` over the last `k` rows.
    pub fn tail_cost_ratio(&self, k: usize) -> f64 {
        let tail = &self.rows[self.rows.len().saturating_sub(k)..];
        tail.iter().map(|r| r.e_c).sum::<f64>() / tail.len() as f64
    }

    /// One CSV row per step; wall times are not included so output is
    /// reproducible.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| CcaError::Io(e.to_string());
        w.write_record(REPORT_HEADER).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                format!("{:e}", r.e_o_x),
                format!("{:e}", r.e_o_y),
                format!("{:e}", r.e_a_x),
                format!("{:e}", r.e_a_y),
                format!("{:e}", r.e_c),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `engine` over `samples`, scoring it against a batch solution
/// recomputed every `cadence` steps (carried forward in between).
pub fn track<'a, I>(engine: &mut AdaptiveCca, samples: I, cadence: usize) -> Result<TrackingReport>
where
    I: IntoIterator<Item = (&'a DVector<f64>, &'a DVector<f64>)>,
{
    if cadence == 0 {
        return Err(CcaError::InvalidArgument("batch cadence must be >= 1".into()));
    }
    let p = engine.config().rank();
    let mut report = TrackingReport::default();
    let mut reference: Option<BatchSolution> = None;
    for (k, (x, y)) in samples.into_iter().enumerate() {
        let started = Instant::now();
        engine.step(x, y)?;
        report.step_seconds.push(started.elapsed().as_secs_f64());

        let state = engine.state();
        if k % cadence == 0 || reference.is_none() {
            reference = Some(solve_batch(state.cx(), state.cy(), state.cxy(), p)?);
        }
        let batch = reference.as_ref().expect("reference computed above");
        let pair = engine.subspaces();
        let batch_cost = batch.cost(&engine.config().weights);
        report.rows.push(TrackingRow {
            t: state.t(),
            e_o_x: orthonormality_error(pair.u(), state.cx())?,
            e_o_y: orthonormality_error(pair.v(), state.cy())?,
            e_a_x: projector_distance(pair.u(), &batch.u, state.cx())?,
            e_a_y: projector_distance(pair.v(), &batch.v, state.cy())?,
            e_c: cost_ratio(engine.cost(), batch_cost)?,
        });
    }
    Ok(report)
}
