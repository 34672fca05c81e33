use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, CcaError, Result};
use crate::manifold::symmetrize;

/// How the running mean of each view is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanRule {
    /// `μ_t = ((t−1)/t)·β·μ_{t−1} + (w_t + μ_{t−1})/t`, applied as written.
    #[default]
    Verbatim,
    /// Conventional exponentially weighted mean `μ_t = βμ_{t−1} + (1−β)w_t`
    /// (cumulative average when `β = 1`).
    Exponential,
}

/// `μ_t = ((t−1)/t)·β·μ_{t−1} + (1/t)·(w_t + μ_{t−1})`.
pub fn update_mean(mu: &DVector<f64>, w: &DVector<f64>, t: u64, beta: f64) -> Result<DVector<f64>> {
    update_mean_with(MeanRule::Verbatim, mu, w, t, beta)
}

pub fn update_mean_with(
    rule: MeanRule,
    mu: &DVector<f64>,
    w: &DVector<f64>,
    t: u64,
    beta: f64,
) -> Result<DVector<f64>> {
    if t == 0 {
        return Err(CcaError::InvalidArgument("mean update needs t >= 1".into()));
    }
    check_dims("update_mean", (mu.len(), 1), (w.len(), 1))?;
    let tf = t as f64;
    Ok(match rule {
        MeanRule::Verbatim => mu * ((tf - 1.0) / tf * beta) + (w + mu) / tf,
        MeanRule::Exponential if t == 1 => w.clone(),
        MeanRule::Exponential if beta < 1.0 => mu * beta + w * (1.0 - beta),
        MeanRule::Exponential => mu + (w - mu) / tf,
    })
}

/// `(βC + xxᵀ)⁻¹ = β⁻¹C⁻¹ − β⁻¹(C⁻¹xxᵀC⁻¹)/(β + xᵀC⁻¹x)` given `C⁻¹`.
pub fn smw_update(c_inv: &DMatrix<f64>, x: &DVector<f64>, beta: f64) -> Result<DMatrix<f64>> {
    let d = x.len();
    check_dims("smw_update", (d, d), c_inv.shape())?;
    let k = c_inv * x;
    let denom = beta + x.dot(&k);
    if !(denom > f64::EPSILON * beta) {
        return Err(CcaError::DegenerateUpdate(denom));
    }
    let mut out = c_inv.clone();
    out.ger(-1.0 / denom, &k, &k, 1.0);
    out /= beta;
    Ok(out)
}

/// `C ← βC + abᵀ`.
pub fn forget_update(c: &mut DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>, beta: f64) {
    *c *= beta;
    c.ger(1.0, a, b, 1.0);
}

/// Forgetting-factor covariances of both views with their maintained
/// inverses and running means.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceState {
    pub(crate) cx: DMatrix<f64>,
    pub(crate) cy: DMatrix<f64>,
    pub(crate) cxy: DMatrix<f64>,
    pub(crate) cx_inv: DMatrix<f64>,
    pub(crate) cy_inv: DMatrix<f64>,
    pub(crate) mu_x: DVector<f64>,
    pub(crate) mu_y: DVector<f64>,
    pub(crate) beta: f64,
    pub(crate) t: u64,
    pub(crate) since_refresh: usize,
}

/// Policy for keeping the Sherman–Morrison inverses honest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversePolicy {
    pub refresh_period: usize,
    pub drift_tol: f64,
}

impl Default for InversePolicy {
    fn default() -> Self {
        Self {
            refresh_period: 500,
            drift_tol: 1e-6,
        }
    }
}

pub(crate) fn spd_inverse(c: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    let mut inv = c
        .clone()
        .cholesky()
        .ok_or(CcaError::NotPositiveDefinite(name))?
        .inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// `‖C⁻¹C − I‖_F`.
pub fn inverse_drift(c_inv: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    let d = c.nrows();
    (c_inv * c - DMatrix::<f64>::identity(d, d)).norm()
}

impl CovarianceState {
    /// Builds a state from explicit covariances; inverses are computed
    /// directly.
    pub fn new(
        cx: DMatrix<f64>,
        cy: DMatrix<f64>,
        cxy: DMatrix<f64>,
        mu_x: DVector<f64>,
        mu_y: DVector<f64>,
        beta: f64,
        t: u64,
    ) -> Result<Self> {
        let n = cx.nrows();
        let m = cy.nrows();
        check_dims("CovarianceState Cx", (n, n), cx.shape())?;
        check_dims("CovarianceState Cy", (m, m), cy.shape())?;
        check_dims("CovarianceState Cxy", (n, m), cxy.shape())?;
        check_dims("CovarianceState mu_x", (n, 1), (mu_x.len(), 1))?;
        check_dims("CovarianceState mu_y", (m, 1), (mu_y.len(), 1))?;
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(CcaError::InvalidArgument(format!(
                "forgetting factor {beta} outside (0, 1]"
            )));
        }
        for (name, c) in [("Cx", &cx), ("Cy", &cy)] {
            if (c - c.transpose()).norm() > 1e-10 * c.norm() {
                return Err(CcaError::NotSymmetric(name));
            }
        }
        let cx_inv = spd_inverse(&cx, "Cx")?;
        let cy_inv = spd_inverse(&cy, "Cy")?;
        Ok(Self {
            cx,
            cy,
            cxy,
            cx_inv,
            cy_inv,
            mu_x,
            mu_y,
            beta,
            t,
            since_refresh: 0,
        })
    }

    pub fn cx(&self) -> &DMatrix<f64> {
        &self.cx
    }

    pub fn cy(&self) -> &DMatrix<f64> {
        &self.cy
    }

    pub fn cxy(&self) -> &DMatrix<f64> {
        &self.cxy
    }

    pub fn cx_inv(&self) -> &DMatrix<f64> {
        &self.cx_inv
    }

    pub fn cy_inv(&self) -> &DMatrix<f64> {
        &self.cy_inv
    }

    pub fn mu_x(&self) -> &DVector<f64> {
        &self.mu_x
    }

    pub fn mu_y(&self) -> &DVector<f64> {
        &self.mu_y
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn n(&self) -> usize {
        self.cx.nrows()
    }

    pub fn m(&self) -> usize {
        self.cy.nrows()
    }

    /// Subtracts the current mean estimates.
    pub fn center(&self, x: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (x - &self.mu_x, y - &self.mu_y)
    }

    pub(crate) fn check_sample(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        check_dims("sample x", (self.n(), 1), (x.len(), 1))?;
        check_dims("sample y", (self.m(), 1), (y.len(), 1))?;
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(CcaError::NonFinite("sample"));
        }
        Ok(())
    }

    /// `C_x ← βC_x + xxᵀ`, `C_y ← βC_y + yyᵀ` with inverse maintenance.
    /// Returns whether a full re-inversion happened.
    pub(crate) fn update_auto(
        &mut self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        policy: &InversePolicy,
    ) -> Result<bool> {
        let beta = self.beta;
        forget_update(&mut self.cx, x, x, beta);
        forget_update(&mut self.cy, y, y, beta);

        self.since_refresh += 1;
        let mut refresh = self.since_refresh >= policy.refresh_period;
        if !refresh {
            match (
                smw_update(&self.cx_inv, x, beta),
                smw_update(&self.cy_inv, y, beta),
            ) {
                (Ok(ix), Ok(iy)) => {
                    self.cx_inv = ix;
                    self.cy_inv = iy;
                    refresh = inverse_drift(&self.cx_inv, &self.cx) > policy.drift_tol
                        || inverse_drift(&self.cy_inv, &self.cy) > policy.drift_tol;
                }
                _ => refresh = true,
            }
        }
        if refresh {
            self.cx_inv = spd_inverse(&self.cx, "Cx")?;
            self.cy_inv = spd_inverse(&self.cy, "Cy")?;
            self.since_refresh = 0;
        }
        Ok(refresh)
    }

    /// `C_xy ← βC_xy + xyᵀ`.
    pub(crate) fn update_cross(&mut self, x: &DVector<f64>, y: &DVector<f64>) {
        forget_update(&mut self.cxy, x, y, self.beta);
    }
}

/// Applies the forgetting update to all three covariances (samples must
/// already be centered) and advances the time index.
pub fn update_covariances(
    state: &CovarianceState,
    x: &DVector<f64>,
    y: &DVector<f64>,
    policy: &InversePolicy,
) -> Result<CovarianceState> {
    state.check_sample(x, y)?;
    let mut next = state.clone();
    next.update_auto(x, y, policy)?;
    next.update_cross(x, y);
    next.t += 1;
    Ok(next)
}
