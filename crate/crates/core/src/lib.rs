//! Streaming canonical correlation analysis on matrix manifolds.
//!
//! Two synchronized vector streams `x_t ∈ ℝⁿ`, `y_t ∈ ℝᵐ` are summarized by
//! exponentially forgotten covariances. The dominant correlated subspaces
//! `U ∈ St_{C_x}(p, n)`, `V ∈ St_{C_y}(p, m)` are tracked by maximizing the
//! Brockett cost `tr(UᵀC_xyVN)` with one Riemannian gradient step per
//! sample, after a metric-update step on generalized orthogonal groups
//! restores feasibility under the new covariances.
//!
//! Modules:
//! - [`manifold`]: generalized Stiefel geometry and retractions
//! - [`batch`]: exact batch solver used as ground truth
//! - [`adaptive`]: the streaming engine
//! - [`metrics`]: tracking error metrics against the batch solution
//! - [`detect`]: reconstruction-residual change detection and evaluation
//! - [`datagen`]: synthetic streams and CSV ingestion

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod batch;
pub mod datagen;
pub mod detect;
pub mod error;
pub mod manifold;
pub mod metrics;

pub use adaptive::{AdaptiveCca, BrockettWeights, CovarianceState, StepConfig, SubspacePair};
pub use batch::{brockett_cost, solve_batch, BatchSolution};
pub use error::{CcaError, Result};
pub use manifold::{GStiefelPoint, MetricMatrix, TangentVector, Tolerances};

#[cfg(test)]
pub(crate) mod testutil {
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    pub fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
        DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
    }

    pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = random_matrix(rng, d, d);
        let mut s = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
        crate::manifold::symmetrize(&mut s);
        s
    }
}
