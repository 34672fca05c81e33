//! Change detection from the tracked subspaces.
//!
//! The criterion scores how badly the current sample is explained by the
//! previous subspaces:
//!
//! ```text
//! r_x = (C_x⁻¹ − UUᵀ)x,   c = ½(r_xᵀC_xr_x / n_x + r_yᵀC_yr_y / n_y)
//! ```
//!
//! using the state *before* the sample is folded in. A change is declared
//! when `c` crosses a threshold `τ` after staying below it for `debounce`
//! samples.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::adaptive::{CovarianceState, SubspacePair};
use crate::error::{check_dims, CcaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub tau: f64,
    pub debounce: usize,
    pub eval_window: usize,
}

impl DetectionConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            debounce: 5,
            eval_window: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.debounce == 0 || self.eval_window == 0 {
            return Err(CcaError::InvalidArgument(
                "debounce and eval_window must be >= 1".into(),
            ));
        }
        if self.tau.is_nan() {
            return Err(CcaError::InvalidArgument("threshold is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub t: usize,
    pub c_value: f64,
    pub threshold: f64,
}

/// Criterion values for consecutive sample indices `start, start + 1, …`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CriterionSeries {
    pub start: usize,
    pub values: Vec<f64>,
}

impl CriterionSeries {
    pub fn new(start: usize, values: Vec<f64>) -> Self {
        Self { start, values }
    }

    pub fn end(&self) -> usize {
        self.start + self.values.len()
    }

    pub fn get(&self, t: usize) -> Option<f64> {
        t.checked_sub(self.start)
            .and_then(|i| self.values.get(i).copied())
    }
}

/// Reconstruction-residual criterion of centered samples against the
/// previous state and bases.
pub fn criterion(
    state: &CovarianceState,
    subspaces: &SubspacePair,
    x: &DVector<f64>,
    y: &DVector<f64>,
    n_x: usize,
    n_y: usize,
) -> Result<f64> {
    check_dims("criterion x", (state.n(), 1), (x.len(), 1))?;
    check_dims("criterion y", (state.m(), 1), (y.len(), 1))?;
    if n_x == 0 || n_y == 0 {
        return Err(CcaError::InvalidArgument(
            "criterion normalizers must be positive".into(),
        ));
    }
    let r_x = state.cx_inv() * x - subspaces.u() * subspaces.u().tr_mul(x);
    let r_y = state.cy_inv() * y - subspaces.v() * subspaces.v().tr_mul(y);
    let qx = r_x.dot(&(state.cx() * &r_x));
    let qy = r_y.dot(&(state.cy() * &r_y));
    Ok((0.5 * (qx / n_x as f64 + qy / n_y as f64)).max(0.0))
}

/// A training run: criterion series plus labeled change indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRun {
    pub series: CriterionSeries,
    pub changes: Vec<usize>,
}

/// `τ = min` of the criterion over every labeled change point that falls
/// inside its series.
pub fn calibrate_threshold(runs: &[LabeledRun]) -> Result<f64> {
    runs.iter()
        .flat_map(|run| run.changes.iter().filter_map(|&t| run.series.get(t)))
        .min_by(f64::total_cmp)
        .ok_or_else(|| {
            CcaError::InvalidArgument("no labeled change point inside the training series".into())
        })
}

/// Event at `t` iff `c_t > τ` and `c_s ≤ τ` for every `s ∈ [t − debounce, t − 1]`.
/// Samples before the series start count as below threshold.
pub fn decide(series: &CriterionSeries, config: &DetectionConfig) -> Vec<DetectionEvent> {
    let tau = config.tau;
    let mut events = Vec::new();
    // index of the most recent sample above threshold
    let mut last_above: Option<usize> = None;
    for (i, &c) in series.values.iter().enumerate() {
        if c > tau {
            let quiet = last_above.is_none_or(|j| i - j > config.debounce);
            if quiet {
                events.push(DetectionEvent {
                    t: series.start + i,
                    c_value: c,
                    threshold: tau,
                });
            }
            last_above = Some(i);
        }
    }
    events
}

/// Confusion counts and ranking quality of a detection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
    pub samples: usize,
    /// `None` when one of the classes is empty.
    pub auc: Option<f64>,
}

/// Scores `events` against `true_changes` over the samples covered by
/// `series`.
///
/// A change counts as detected when an event falls in
/// `[change, change + eval_window]`; events are matched greedily in time
/// order, each to at most one change. AUC ranks every sample's criterion
/// against the labels "inside some post-change window".
pub fn evaluate(
    events: &[DetectionEvent],
    true_changes: &[usize],
    series: &CriterionSeries,
    config: &DetectionConfig,
) -> Result<Evaluation> {
    config.validate()?;
    let w = config.eval_window;
    for pair in true_changes.windows(2) {
        if pair[1] <= pair[0] + w {
            return Err(CcaError::InvalidArgument(format!(
                "change windows overlap: {} and {} with eval_window {w}",
                pair[0], pair[1]
            )));
        }
    }
    let (start, end) = (series.start, series.end());
    for &t in true_changes.iter().chain(events.iter().map(|e| &e.t)) {
        if t < start || t >= end {
            return Err(CcaError::InvalidArgument(format!(
                "index {t} outside evaluated range [{start}, {end})"
            )));
        }
    }

    let mut matched = vec![false; true_changes.len()];
    let mut fp = 0;
    for e in events {
        let hit = true_changes
            .iter()
            .enumerate()
            .find(|(k, &c)| !matched[*k] && e.t >= c && e.t <= c + w);
        match hit {
            Some((k, _)) => matched[k] = true,
            None => fp += 1,
        }
    }
    let tp = matched.iter().filter(|m| **m).count();
    let fn_ = true_changes.len() - tp;
    let samples = series.values.len();

    let labels: Vec<bool> = (start..end)
        .map(|t| true_changes.iter().any(|&c| t >= c && t <= c + w))
        .collect();

    Ok(Evaluation {
        threshold: config.tau,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: samples.saturating_sub(tp + fp + fn_),
        samples,
        auc: auc(&series.values, &labels),
    })
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties counted
/// half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    if scores.len() != labels.len() {
        return None;
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (pos, neg) = (pos as f64, neg as f64);
    Some((rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg))
}
