use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::cost::cost_phase;
use super::covariance::{forget_update, update_mean_with, CovarianceState};
use super::metric::metric_phase;
use super::{StepConfig, SubspacePair};
use crate::batch::{solve_batch, BatchSolution};
use crate::error::{check_dims, CcaError, Result};
use crate::manifold::{gram_schmidt_g, MetricMatrix};

/// Relative ridge added to a window covariance whose factorization fails.
const WINDOW_RIDGE: f64 = 1e-8;

/// How the initial bases are chosen from the window covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitStrategy {
    /// Exact batch solution on the window.
    Batch,
    /// Random feasible bases (G-orthonormalized Gaussian matrices).
    Random { seed: u64 },
}

/// What happened during one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub metric_step: f64,
    pub cost_step: f64,
    pub cost_slope: f64,
    pub inverse_refreshed: bool,
    pub metric_line_search_failures: usize,
    pub cost_line_search_failures: usize,
}

/// Counters accumulated by an [`AdaptiveCca`] engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub steps: u64,
    pub inverse_refreshes: u64,
    pub metric_line_search_failures: u64,
    pub cost_line_search_failures: u64,
    pub non_ascent_directions: u64,
}

/// One step of the adaptive algorithm. Inputs are left untouched; on error
/// no partial state escapes.
pub fn step(
    state: &CovarianceState,
    subspaces: &SubspacePair,
    x_raw: &DVector<f64>,
    y_raw: &DVector<f64>,
    config: &StepConfig,
) -> Result<(CovarianceState, SubspacePair, StepReport)> {
    state.check_sample(x_raw, y_raw)?;
    check_dims(
        "step weights",
        (subspaces.rank(), 1),
        (config.weights.rank(), 1),
    )?;
    let beta = state.beta();
    let mut next = state.clone();
    next.t += 1;

    // center with the previous mean estimate, then update it
    let (x, y) = state.center(x_raw, y_raw);
    next.mu_x = update_mean_with(config.mean_rule, &state.mu_x, x_raw, next.t, beta)?;
    next.mu_y = update_mean_with(config.mean_rule, &state.mu_y, y_raw, next.t, beta)?;

    // compressed samples against the previous bases
    let z_x = subspaces.u.tr_mul(&x);
    let z_y = subspaces.v.tr_mul(&y);

    let metric = metric_phase(
        &subspaces.u,
        &subspaces.v,
        &subspaces.l,
        &z_x,
        &z_y,
        beta,
        config,
    )?;

    let refreshed = next.update_auto(&x, &y, &config.inverse_policy())?;

    let cost = cost_phase(&metric.u, &metric.v, &next, &x, &y, config)?;

    next.update_cross(&x, &y);

    let report = StepReport {
        metric_step: metric.step,
        cost_step: cost.step,
        cost_slope: cost.slope,
        inverse_refreshed: refreshed,
        metric_line_search_failures: metric.line_search_failures,
        cost_line_search_failures: cost.line_search_failures,
    };
    let pair = SubspacePair {
        u: cost.u,
        v: cost.v,
        l: cost.l,
    };
    Ok((next, pair, report))
}

fn regularized(c: DMatrix<f64>) -> DMatrix<f64> {
    let d = c.nrows();
    let ridge = WINDOW_RIDGE * c.trace() / d as f64;
    let ridge = if ridge > 0.0 { ridge } else { WINDOW_RIDGE };
    c + DMatrix::identity(d, d) * ridge
}

fn window_factorizes(c: &DMatrix<f64>) -> bool {
    c.clone().cholesky().is_some()
}

/// Accumulates the window covariances (centered by the window mean, with
/// forgetting) and picks initial bases.
pub fn init_from_window(
    samples_x: &[DVector<f64>],
    samples_y: &[DVector<f64>],
    p: usize,
    beta: f64,
    strategy: InitStrategy,
) -> Result<(CovarianceState, SubspacePair)> {
    let len = samples_x.len();
    if len != samples_y.len() {
        return Err(CcaError::InvalidArgument(format!(
            "window views have different lengths ({len} vs {})",
            samples_y.len()
        )));
    }
    if len == 0 || len < p {
        return Err(CcaError::InvalidArgument(format!(
            "window of {len} samples is shorter than rank {p}"
        )));
    }
    let n = samples_x[0].len();
    let m = samples_y[0].len();
    if p == 0 || p > n.min(m) {
        return Err(CcaError::InvalidArgument(format!(
            "rank {p} must be in 1..={}",
            n.min(m)
        )));
    }
    for (x, y) in samples_x.iter().zip(samples_y) {
        check_dims("window x", (n, 1), (x.len(), 1))?;
        check_dims("window y", (m, 1), (y.len(), 1))?;
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(CcaError::NonFinite("window sample"));
        }
    }
    let mu_x = samples_x.iter().fold(DVector::zeros(n), |acc, x| acc + x) / len as f64;
    let mu_y = samples_y.iter().fold(DVector::zeros(m), |acc, y| acc + y) / len as f64;

    let mut cx = DMatrix::zeros(n, n);
    let mut cy = DMatrix::zeros(m, m);
    let mut cxy = DMatrix::zeros(n, m);
    for (x, y) in samples_x.iter().zip(samples_y) {
        let xc = x - &mu_x;
        let yc = y - &mu_y;
        forget_update(&mut cx, &xc, &xc, beta);
        forget_update(&mut cy, &yc, &yc, beta);
        forget_update(&mut cxy, &xc, &yc, beta);
    }

    let mut attempt = 0;
    let batch: Option<BatchSolution> = loop {
        let usable = window_factorizes(&cx) && window_factorizes(&cy);
        let solved = if usable && strategy == InitStrategy::Batch {
            solve_batch(&cx, &cy, &cxy, p).ok()
        } else {
            None
        };
        let ok = match strategy {
            InitStrategy::Batch => solved.is_some(),
            InitStrategy::Random { .. } => usable,
        };
        if ok {
            break solved;
        }
        if attempt == 1 {
            return Err(CcaError::RankDeficient { column: p });
        }
        attempt += 1;
        cx = regularized(cx);
        cy = regularized(cy);
    };

    let state = CovarianceState::new(cx, cy, cxy, mu_x, mu_y, beta, len as u64)?;
    let (u, v) = match (strategy, batch) {
        (InitStrategy::Batch, Some(sol)) => (sol.u, sol.v),
        (InitStrategy::Random { seed }, _) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut gaussian =
                |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
            let a = gaussian(n, p);
            let b = gaussian(m, p);
            let gx = MetricMatrix::new(state.cx.clone())?;
            let gy = MetricMatrix::new(state.cy.clone())?;
            (
                gram_schmidt_g(&a, &gx)?.into_matrix(),
                gram_schmidt_g(&b, &gy)?.into_matrix(),
            )
        }
        (InitStrategy::Batch, None) => unreachable!("batch strategy always solves or errors"),
    };
    let pair = SubspacePair::new(u, v, &state.cxy)?;
    Ok((state, pair))
}

/// A single-stream engine owning its covariance state and bases.
#[derive(Debug, Clone)]
pub struct AdaptiveCca {
    state: CovarianceState,
    subspaces: SubspacePair,
    config: StepConfig,
    diagnostics: Diagnostics,
}

impl AdaptiveCca {
    pub fn new(state: CovarianceState, subspaces: SubspacePair, config: StepConfig) -> Result<Self> {
        config.validate()?;
        check_dims("engine U", (state.n(), config.rank()), subspaces.u.shape())?;
        check_dims("engine V", (state.m(), config.rank()), subspaces.v.shape())?;
        Ok(Self {
            state,
            subspaces,
            config,
            diagnostics: Diagnostics::default(),
        })
    }

    /// Initializes from a window of raw samples.
    pub fn from_window(
        samples_x: &[DVector<f64>],
        samples_y: &[DVector<f64>],
        beta: f64,
        config: StepConfig,
        strategy: InitStrategy,
    ) -> Result<Self> {
        config.validate()?;
        let (state, pair) =
            init_from_window(samples_x, samples_y, config.rank(), beta, strategy)?;
        Self::new(state, pair, config)
    }

    pub fn step(&mut self, x_raw: &DVector<f64>, y_raw: &DVector<f64>) -> Result<StepReport> {
        let (state, pair, report) =
            step(&self.state, &self.subspaces, x_raw, y_raw, &self.config)?;
        self.state = state;
        self.subspaces = pair;
        let d = &mut self.diagnostics;
        d.steps += 1;
        d.inverse_refreshes += report.inverse_refreshed as u64;
        d.metric_line_search_failures += report.metric_line_search_failures as u64;
        d.cost_line_search_failures += report.cost_line_search_failures as u64;
        if !(report.cost_slope > 0.0) {
            d.non_ascent_directions += 1;
        }
        Ok(report)
    }

    /// Change criterion of a raw sample against the current (pre-update)
    /// state. Call before [`AdaptiveCca::step`] with the same sample.
    pub fn criterion(&self, x_raw: &DVector<f64>, y_raw: &DVector<f64>) -> Result<f64> {
        let (x, y) = self.state.center(x_raw, y_raw);
        crate::detect::criterion(
            &self.state,
            &self.subspaces,
            &x,
            &y,
            self.state.n(),
            self.state.m(),
        )
    }

    pub fn state(&self) -> &CovarianceState {
        &self.state
    }

    pub fn subspaces(&self) -> &SubspacePair {
        &self.subspaces
    }

    pub fn config(&self) -> &StepConfig {
        &self.config
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    /// Brockett cost of the current bases on the current cross-covariance.
    pub fn cost(&self) -> f64 {
        self.subspaces.cost(&self.config.weights)
    }
}
