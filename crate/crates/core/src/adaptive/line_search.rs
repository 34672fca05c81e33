use serde::{Deserialize, Serialize};

use crate::error::{CcaError, Result};

/// Backtracking line search with a sufficient-increase (Armijo) test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearchConfig {
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub max_trials: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            max_trials: 20,
        }
    }
}

impl LineSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(CcaError::InvalidArgument(
                "line search initial step must be positive".into(),
            ));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(CcaError::InvalidArgument(
                "line search shrink factor must lie in (0, 1)".into(),
            ));
        }
        if !(self.armijo >= 0.0 && self.armijo < 1.0) {
            return Err(CcaError::InvalidArgument(
                "Armijo constant must lie in [0, 1)".into(),
            ));
        }
        if self.max_trials == 0 {
            return Err(CcaError::InvalidArgument(
                "line search needs at least one trial".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    /// Accepted step, `0` when nothing was accepted.
    pub step: f64,
    /// Objective at the accepted step (or at zero).
    pub value: f64,
    pub trials: usize,
    pub accepted: bool,
}

/// Finds the largest `ζ = ζ₀·shrinkᵏ` with `f(ζ) ≥ f(0) + c·ζ·slope`.
///
/// `slope` is the directional derivative at zero; a nonpositive slope means
/// the direction does not ascend and no trial is made. Trials whose
/// evaluation fails (for instance a collapsed retraction) count as rejected.
pub fn backtracking<F>(f0: f64, slope: f64, cfg: &LineSearchConfig, mut f: F) -> LineSearchOutcome
where
    F: FnMut(f64) -> Result<f64>,
{
    let rejected = LineSearchOutcome {
        step: 0.0,
        value: f0,
        trials: 0,
        accepted: false,
    };
    if !(slope > 0.0) || !slope.is_finite() {
        return rejected;
    }
    let mut zeta = cfg.initial_step;
    for trial in 1..=cfg.max_trials {
        if let Ok(value) = f(zeta) {
            if value.is_finite() && value >= f0 + cfg.armijo * zeta * slope {
                return LineSearchOutcome {
                    step: zeta,
                    value,
                    trials: trial,
                    accepted: true,
                };
            }
        }
        zeta *= cfg.shrink;
    }
    LineSearchOutcome {
        trials: cfg.max_trials,
        ..rejected
    }
}
