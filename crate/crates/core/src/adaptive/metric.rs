use nalgebra::{DMatrix, DVector};

use super::line_search::backtracking;
use super::{compressed_gram, StepConfig};
use crate::batch::BrockettWeights;
use crate::error::{check_dims, Result};
use crate::manifold::{oblique_qr, rank_one_inv_sqrt, rank_one_inverse};

/// Output of the metric-update phase.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricUpdate {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// `O_uᵀLO_v`, the compressed cross-covariance of the re-weighted bases
    /// against the previous cross-covariance.
    pub l: DMatrix<f64>,
    pub o_u: DMatrix<f64>,
    pub o_v: DMatrix<f64>,
    /// Accepted step of the last gradient iteration.
    pub step: f64,
    pub line_search_failures: usize,
}

/// `Σ_j N_j·(a_jᵀ M b_j) = tr(AᵀMBN)`.
fn weighted_trace(a: &DMatrix<f64>, m: &DMatrix<f64>, b: &DMatrix<f64>, w: &BrockettWeights) -> f64 {
    let mb = m * b;
    w.values()
        .iter()
        .enumerate()
        .map(|(j, n)| n * a.column(j).dot(&mb.column(j)))
        .sum()
}

/// Riemannian gradients of `tr(O_uᵀLO_vN)` on `O_{G_x}(p) × O_{G_y}(p)`:
///
/// ```text
/// ξ_{O_u} = G_x⁻¹ L O_v N − ½ O_u (L̂N + NL̂ᵀ),   L̂ = O_uᵀLO_v
/// ξ_{O_v} = G_y⁻¹ Lᵀ O_u N − ½ O_v (L̂ᵀN + NL̂)
/// ```
pub fn metric_gradients(
    o_u: &DMatrix<f64>,
    o_v: &DMatrix<f64>,
    l: &DMatrix<f64>,
    gx_inv: &DMatrix<f64>,
    gy_inv: &DMatrix<f64>,
    weights: &BrockettWeights,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let l_hat = o_u.transpose() * l * o_v;
    let sym_u = weights.scale_columns(&l_hat) + weights.scale_rows(&l_hat.transpose());
    let sym_v = weights.scale_columns(&l_hat.transpose()) + weights.scale_rows(&l_hat);
    let xi_u = gx_inv * weights.scale_columns(&(l * o_v)) - o_u * sym_u * 0.5;
    let xi_v = gy_inv * weights.scale_columns(&(l.transpose() * o_u)) - o_v * sym_v * 0.5;
    (xi_u, xi_v)
}

/// Restores feasibility of `(U, V)` under the updated auto-covariances while
/// keeping their spans.
///
/// `(U, V)` must be feasible under the previous covariances and `z_x = Uᵀx`,
/// `z_y = Vᵀy`. With `metric_steps = 0` the result is `U·G_x^{-1/2}`.
#[allow(clippy::too_many_arguments)]
pub fn metric_phase(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    l: &DMatrix<f64>,
    z_x: &DVector<f64>,
    z_y: &DVector<f64>,
    beta: f64,
    config: &StepConfig,
) -> Result<MetricUpdate> {
    let p = u.ncols();
    let weights = &config.weights;
    check_dims("metric_phase V", (v.nrows(), p), v.shape())?;
    check_dims("metric_phase L", (p, p), l.shape())?;
    check_dims("metric_phase z_x", (p, 1), (z_x.len(), 1))?;
    check_dims("metric_phase z_y", (p, 1), (z_y.len(), 1))?;
    check_dims("metric_phase weights", (p, 1), (weights.rank(), 1))?;

    let gx = compressed_gram(beta, z_x);
    let gy = compressed_gram(beta, z_y);
    let gx_inv = rank_one_inverse(beta, z_x);
    let gy_inv = rank_one_inverse(beta, z_y);

    let mut o_u = rank_one_inv_sqrt(beta, z_x);
    let mut o_v = rank_one_inv_sqrt(beta, z_y);
    let mut step = 0.0;
    let mut failures = 0;

    for _ in 0..config.metric_steps {
        let (xi_u, xi_v) = metric_gradients(&o_u, &o_v, l, &gx_inv, &gy_inv, weights);
        let f0 = weighted_trace(&o_u, l, &o_v, weights);
        let slope = weighted_trace(&xi_u, l, &o_v, weights) + weighted_trace(&o_u, l, &xi_v, weights);
        let mut best = None;
        let outcome = backtracking(f0, slope, &config.line_search, |zeta| {
            let qu = oblique_qr(&(&o_u + &xi_u * zeta), &gx)?;
            let qv = oblique_qr(&(&o_v + &xi_v * zeta), &gy)?;
            let value = weighted_trace(&qu, l, &qv, weights);
            best = Some((qu, qv));
            Ok(value)
        });
        if outcome.accepted {
            let (qu, qv) = best.expect("accepted trial was evaluated");
            o_u = qu;
            o_v = qv;
            step = outcome.step;
        } else {
            step = 0.0;
            if slope > 0.0 {
                failures += 1;
            }
            break;
        }
    }

    let l_new = o_u.transpose() * l * &o_v;
    Ok(MetricUpdate {
        u: u * &o_u,
        v: v * &o_v,
        l: l_new,
        o_u,
        o_v,
        step,
        line_search_failures: failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::solve_batch;
    use crate::manifold::{feasibility_error, MetricMatrix};
    use crate::testutil::{random_matrix, random_spd, random_vector, rng};

    fn config(p: usize, steps: usize) -> StepConfig {
        let mut c = StepConfig::for_rank(p);
        c.metric_steps = steps;
        c
    }

    #[test]
    fn zero_samples_rescale() {
        let u = DMatrix::<f64>::identity(4, 2);
        let l = DMatrix::from_diagonal(&DVector::from_vec(vec![0.8, 0.3]));
        let z = DVector::zeros(2);
        let out = metric_phase(&u, &u, &l, &z, &z, 0.81, &config(2, 0)).unwrap();
        assert!((out.o_u - DMatrix::<f64>::identity(2, 2) / 0.9).norm() < 1e-15);
        assert!((out.u - &u / 0.9).norm() < 1e-15);
    }

    #[test]
    fn no_forgetting_no_sample_is_identity() {
        let u = DMatrix::<f64>::identity(4, 2);
        let l = DMatrix::from_diagonal(&DVector::from_vec(vec![0.8, 0.3]));
        let z = DVector::zeros(2);
        let out = metric_phase(&u, &u, &l, &z, &z, 1.0, &config(2, 1)).unwrap();
        assert_eq!(out.u, u);
        assert_eq!(out.l, l);
    }

    #[test]
    fn closed_form_restores_feasibility() {
        let mut r = rng(41);
        for _ in 0..10 {
            let n = 6;
            let m = 5;
            let p = 3;
            let beta = 0.95;
            let cx = random_spd(&mut r, n);
            let cy = random_spd(&mut r, m);
            let cxy = random_matrix(&mut r, n, m) * 0.2;
            let sol = solve_batch(&cx, &cy, &cxy, p).unwrap();
            let x = random_vector(&mut r, n);
            let y = random_vector(&mut r, m);
            let z_x = sol.u.tr_mul(&x);
            let z_y = sol.v.tr_mul(&y);
            for steps in [0, 3] {
                let out =
                    metric_phase(&sol.u, &sol.v, &sol.l, &z_x, &z_y, beta, &config(p, steps))
                        .unwrap();
                let cx_new = MetricMatrix::new(&cx * beta + &x * x.transpose()).unwrap();
                let cy_new = MetricMatrix::new(&cy * beta + &y * y.transpose()).unwrap();
                let gram = out.u.transpose() * cx_new.matrix() * &out.u;
                assert!((gram - DMatrix::<f64>::identity(p, p)).norm() <= 1e-10);
                assert!(feasibility_error(&out.v, &cy_new).unwrap() <= 1e-10);
                let l_direct = out.u.transpose() * &cxy * &out.v;
                assert!((&out.l - l_direct).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_steps_do_not_decrease_cost() {
        let mut r = rng(42);
        let p = 3;
        let l = random_matrix(&mut r, p, p);
        let z_x = random_vector(&mut r, p);
        let z_y = random_vector(&mut r, p);
        let cfg0 = config(p, 0);
        let cfg = config(p, 5);
        let u = DMatrix::<f64>::identity(p, p);
        let base = metric_phase(&u, &u, &l, &z_x, &z_y, 0.9, &cfg0).unwrap();
        let refined = metric_phase(&u, &u, &l, &z_x, &z_y, 0.9, &cfg).unwrap();
        let w = &cfg.weights;
        let c0 = weighted_trace(&base.o_u, &l, &base.o_v, w);
        let c1 = weighted_trace(&refined.o_u, &l, &refined.o_v, w);
        assert!(c1 >= c0);
    }

    #[test]
    fn gradients_are_tangent() {
        let mut r = rng(43);
        let p = 4;
        let z_x = random_vector(&mut r, p);
        let z_y = random_vector(&mut r, p);
        let gx = compressed_gram(0.9, &z_x);
        let o_u = rank_one_inv_sqrt(0.9, &z_x);
        let o_v = rank_one_inv_sqrt(0.9, &z_y);
        let l = random_matrix(&mut r, p, p);
        let w = BrockettWeights::linear(p);
        let (xi_u, _) = metric_gradients(
            &o_u,
            &o_v,
            &l,
            &rank_one_inverse(0.9, &z_x),
            &rank_one_inverse(0.9, &z_y),
            &w,
        );
        let omega = o_u.transpose() * &gx * &xi_u;
        assert!((&omega + omega.transpose()).norm() < 1e-12);
    }
}
