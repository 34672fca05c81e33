//! The streaming engine.
//!
//! Each sample `(x_t, y_t)` is processed in two phases:
//!
//! 1. **Metric update.** The previous bases are re-weighted inside their own
//!    spans, `U' = U·O_u`, `V' = V·O_v` with `O_u ∈ O_{G_x}(p)`,
//!    `G_x = βI + z_xz_xᵀ`, so that they become feasible under the freshly
//!    updated auto-covariances. `O_u` starts at `G_x^{-1/2}` (closed form)
//!    and is refined by gradient ascent of `tr(O_uᵀLO_vN)`.
//! 2. **Cost update.** One (or more) Riemannian gradient steps on
//!    `St_{C_x}(p, n) × St_{C_y}(p, m)` using the rank-one gradient and the
//!    closed-form polar retraction, with a shared backtracking step size.
//!
//! The cross-covariance is updated last.

mod cost;
mod covariance;
mod engine;
mod line_search;
mod metric;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use crate::batch::BrockettWeights;
use crate::error::{check_dims, CcaError, Result};
use crate::manifold::rank_one_inverse;

pub use cost::{
    brockett_gradient, cost_phase, efficient_polar_update, stiefel_gradient, CostUpdate,
};
pub use covariance::{
    forget_update, inverse_drift, smw_update, update_covariances, update_mean, update_mean_with,
    CovarianceState, InversePolicy, MeanRule,
};
pub use engine::{
    init_from_window, step, AdaptiveCca, Diagnostics, InitStrategy, StepReport,
};
pub use line_search::{backtracking, LineSearchConfig, LineSearchOutcome};
pub use metric::{metric_gradients, metric_phase, MetricUpdate};

/// Tuning of one engine step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub line_search: LineSearchConfig,
    /// Gradient iterations in the metric phase; `0` keeps the closed-form
    /// initial point.
    pub metric_steps: usize,
    pub cost_steps: usize,
    pub weights: BrockettWeights,
    pub inv_refresh_period: usize,
    pub inv_drift_tol: f64,
    pub mean_rule: MeanRule,
}

impl StepConfig {
    /// Defaults for rank `p`: linear weights, one gradient step per phase.
    pub fn for_rank(p: usize) -> Self {
        Self {
            line_search: LineSearchConfig::default(),
            metric_steps: 1,
            cost_steps: 1,
            weights: BrockettWeights::linear(p),
            inv_refresh_period: 500,
            inv_drift_tol: 1e-6,
            mean_rule: MeanRule::default(),
        }
    }

    pub fn rank(&self) -> usize {
        self.weights.rank()
    }

    pub fn validate(&self) -> Result<()> {
        self.line_search.validate()?;
        if self.cost_steps == 0 {
            return Err(CcaError::InvalidArgument("cost_steps must be >= 1".into()));
        }
        if self.inv_refresh_period == 0 {
            return Err(CcaError::InvalidArgument(
                "inv_refresh_period must be >= 1".into(),
            ));
        }
        if !(self.inv_drift_tol > 0.0) {
            return Err(CcaError::InvalidArgument(
                "inv_drift_tol must be positive".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn inverse_policy(&self) -> InversePolicy {
        InversePolicy {
            refresh_period: self.inv_refresh_period,
            drift_tol: self.inv_drift_tol,
        }
    }
}

/// Current bases `U` (n×p), `V` (m×p) and the cached `L = UᵀC_xyV`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspacePair {
    pub(crate) u: DMatrix<f64>,
    pub(crate) v: DMatrix<f64>,
    pub(crate) l: DMatrix<f64>,
}

impl SubspacePair {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>, cxy: &DMatrix<f64>) -> Result<Self> {
        let p = u.ncols();
        check_dims("SubspacePair V", (cxy.ncols(), p), v.shape())?;
        check_dims("SubspacePair U", (cxy.nrows(), p), u.shape())?;
        let l = u.transpose() * cxy * &v;
        Ok(Self { u, v, l })
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// `(‖UᵀC_xU − I‖_F, ‖VᵀC_yV − I‖_F)`.
    pub fn feasibility(&self, state: &CovarianceState) -> (f64, f64) {
        let p = self.rank();
        let eye = DMatrix::<f64>::identity(p, p);
        let ex = (self.u.transpose() * state.cx() * &self.u - &eye).norm();
        let ey = (self.v.transpose() * state.cy() * &self.v - &eye).norm();
        (ex, ey)
    }

    pub fn cost(&self, weights: &BrockettWeights) -> f64 {
        weights
            .values()
            .iter()
            .zip(self.l.diagonal().iter())
            .map(|(n, l)| n * l)
            .sum()
    }
}

/// Per-sample compressed quantities: `z = Uᵀx`, `f = C⁻¹x − Uz` and the
/// compressed auto-covariances `G = βI + zzᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedQuantities {
    pub z_x: DVector<f64>,
    pub z_y: DVector<f64>,
    pub f_x: DVector<f64>,
    pub f_y: DVector<f64>,
    pub gx: DMatrix<f64>,
    pub gy: DMatrix<f64>,
}

impl CompressedQuantities {
    pub fn gx_inv(&self, beta: f64) -> DMatrix<f64> {
        rank_one_inverse(beta, &self.z_x)
    }

    pub fn gy_inv(&self, beta: f64) -> DMatrix<f64> {
        rank_one_inverse(beta, &self.z_y)
    }
}

pub(crate) fn compressed_gram(beta: f64, z: &DVector<f64>) -> DMatrix<f64> {
    let p = z.len();
    let mut g = DMatrix::identity(p, p) * beta;
    g.ger(1.0, z, z, 1.0);
    g
}

pub fn compress(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    cx_inv: &DMatrix<f64>,
    cy_inv: &DMatrix<f64>,
    beta: f64,
) -> Result<CompressedQuantities> {
    let p = u.ncols();
    check_dims("compress U", (x.len(), p), u.shape())?;
    check_dims("compress V", (y.len(), p), v.shape())?;
    check_dims("compress Cx_inv", (x.len(), x.len()), cx_inv.shape())?;
    check_dims("compress Cy_inv", (y.len(), y.len()), cy_inv.shape())?;
    let z_x = u.tr_mul(x);
    let z_y = v.tr_mul(y);
    let f_x = cx_inv * x - u * &z_x;
    let f_y = cy_inv * y - v * &z_y;
    let gx = compressed_gram(beta, &z_x);
    let gy = compressed_gram(beta, &z_y);
    Ok(CompressedQuantities {
        z_x,
        z_y,
        f_x,
        f_y,
        gx,
        gy,
    })
}
