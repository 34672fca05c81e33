use nalgebra::{DMatrix, DVector};

use super::covariance::CovarianceState;
use super::line_search::backtracking;
use super::{compress, StepConfig};
use crate::batch::{brockett_cost, BrockettWeights};
use crate::error::{check_dims, Result};
use crate::manifold::rank_one_shrink;

/// Relative size below which the component of `z_x` orthogonal to `Nz_y`
/// is treated as zero.
const DEGENERATE_ZBAR: f64 = 1e-12;

/// Rank-one Brockett gradient on `St_{C_x}(p, n)`:
/// `ξ_U = f_x z_yᵀN + ½U(z_x z_yᵀN − Nz_y z_xᵀ)`.
pub fn stiefel_gradient(
    u: &DMatrix<f64>,
    f_x: &DVector<f64>,
    z_x: &DVector<f64>,
    z_y: &DVector<f64>,
    weights: &BrockettWeights,
) -> Result<DMatrix<f64>> {
    let p = u.ncols();
    check_dims("stiefel_gradient f_x", (u.nrows(), 1), (f_x.len(), 1))?;
    check_dims("stiefel_gradient z_x", (p, 1), (z_x.len(), 1))?;
    check_dims("stiefel_gradient z_y", (p, 1), (z_y.len(), 1))?;
    let a = weights.apply(z_y);
    let mut skew = z_x * a.transpose();
    skew.ger(-1.0, &a, z_x, 1.0);
    let mut xi = u * skew * 0.5;
    xi.ger(1.0, f_x, &a, 1.0);
    Ok(xi)
}

/// Full Brockett gradient `C_x⁻¹C_xyVN − ½U(LN + NLᵀ)` with `L = UᵀC_xyV`.
pub fn brockett_gradient(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    cx_inv: &DMatrix<f64>,
    cxy: &DMatrix<f64>,
    weights: &BrockettWeights,
) -> Result<DMatrix<f64>> {
    let (n, m) = cxy.shape();
    let p = weights.rank();
    check_dims("brockett_gradient U", (n, p), u.shape())?;
    check_dims("brockett_gradient V", (m, p), v.shape())?;
    check_dims("brockett_gradient Cx_inv", (n, n), cx_inv.shape())?;
    let cv = cxy * v;
    let l = u.transpose() * &cv;
    let sym = weights.scale_columns(&l) + weights.scale_rows(&l.transpose());
    Ok(cx_inv * weights.scale_columns(&cv) - u * sym * 0.5)
}

/// Closed-form polar retraction of `U` along the rank-one gradient.
///
/// With `a = Nz_y` and `z̄ = z_x − (z_xᵀa / aᵀa)·a`, the Gram matrix
/// `I + ζ²ξᵀC_xξ` only acts on the orthogonal directions `a` and `z̄`, so its
/// inverse square root is `I − ρP_a − ρ̄P_z̄` with
///
/// ```text
/// α = (f_xᵀC_xf_x + z̄ᵀz̄/4)(aᵀa)ζ²,   ᾱ = (z̄ᵀz̄/4)(aᵀa)ζ²,
/// ρ = 1 − (1+α)^{-1/2},               ρ̄ = 1 − (1+ᾱ)^{-1/2}.
/// ```
///
/// `f_quad` is `f_xᵀC_xf_x`. Costs `O(np)`.
#[allow(clippy::too_many_arguments)]
pub fn efficient_polar_update(
    u: &DMatrix<f64>,
    f_x: &DVector<f64>,
    z_x: &DVector<f64>,
    z_y: &DVector<f64>,
    weights: &BrockettWeights,
    zeta: f64,
    f_quad: f64,
) -> Result<DMatrix<f64>> {
    let p = u.ncols();
    check_dims("efficient_polar_update f_x", (u.nrows(), 1), (f_x.len(), 1))?;
    check_dims("efficient_polar_update z_x", (p, 1), (z_x.len(), 1))?;
    check_dims("efficient_polar_update z_y", (p, 1), (z_y.len(), 1))?;
    let a = weights.apply(z_y);
    let a2 = a.norm_squared();
    if zeta == 0.0 || a2 == 0.0 {
        // ξ_U vanishes identically when z_y = 0
        return Ok(u.clone());
    }
    let z_bar = z_x - &a * (z_x.dot(&a) / a2);
    let zb2 = z_bar.norm_squared();
    let degenerate = zb2.sqrt() <= DEGENERATE_ZBAR * z_x.norm();
    let zb2 = if degenerate { 0.0 } else { zb2 };

    let z2 = zeta * zeta;
    let alpha = (f_quad + zb2 / 4.0) * a2 * z2;
    let rho = rank_one_shrink(alpha);

    let ua = u * &a;
    let mut out = u.clone();
    out.ger(-rho / a2, &ua, &a, 1.0);
    out.ger(zeta * (1.0 - rho), f_x, &a, 1.0);
    if !degenerate {
        let alpha_bar = zb2 / 4.0 * a2 * z2;
        let rho_bar = rank_one_shrink(alpha_bar);
        let uz = u * &z_bar;
        out.ger(-rho_bar / zb2, &uz, &z_bar, 1.0);
        out.ger(0.5 * zeta * (1.0 - rho), &uz, &a, 1.0);
        out.ger(-0.5 * zeta * (1.0 - rho_bar), &ua, &z_bar, 1.0);
    }
    Ok(out)
}

/// Output of the cost-update phase.
#[derive(Debug, Clone, PartialEq)]
pub struct CostUpdate {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// `UᵀC_xyV` against the cross-covariance including the current sample.
    pub l: DMatrix<f64>,
    /// Step accepted in the last gradient iteration (`0` if none).
    pub step: f64,
    /// Directional derivative of the cost at the start of the last iteration.
    pub slope: f64,
    pub line_search_failures: usize,
}

/// Gradient ascent of `tr(UᵀC_xy^tVN)` on the product of generalized
/// Stiefel manifolds.
///
/// `state` must already hold the updated auto-covariances and their
/// inverses, while its cross-covariance is still the previous one; `(U, V)`
/// must be feasible under the updated metrics and `(x, y)` centered.
pub fn cost_phase(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    state: &CovarianceState,
    x: &DVector<f64>,
    y: &DVector<f64>,
    config: &StepConfig,
) -> Result<CostUpdate> {
    let weights = &config.weights;
    let beta = state.beta();
    let mut cxy = state.cxy() * beta;
    cxy.ger(1.0, x, y, 1.0);

    let mut u = u.clone();
    let mut v = v.clone();
    let mut step = 0.0;
    let mut slope = 0.0;
    let mut failures = 0;

    for _ in 0..config.cost_steps {
        let q = compress(&u, &v, x, y, state.cx_inv(), state.cy_inv(), beta)?;
        let xi_u = stiefel_gradient(&u, &q.f_x, &q.z_x, &q.z_y, weights)?;
        let xi_v = stiefel_gradient(&v, &q.f_y, &q.z_y, &q.z_x, weights)?;
        let fq_x = q.f_x.dot(&(state.cx() * &q.f_x));
        let fq_y = q.f_y.dot(&(state.cy() * &q.f_y));

        let f0 = brockett_cost(&u, &v, &cxy, weights)?;
        slope = brockett_cost(&xi_u, &v, &cxy, weights)? + brockett_cost(&u, &xi_v, &cxy, weights)?;
        let mut last = None;
        let outcome = backtracking(f0, slope, &config.line_search, |zeta| {
            let nu = efficient_polar_update(&u, &q.f_x, &q.z_x, &q.z_y, weights, zeta, fq_x)?;
            let nv = efficient_polar_update(&v, &q.f_y, &q.z_y, &q.z_x, weights, zeta, fq_y)?;
            let value = brockett_cost(&nu, &nv, &cxy, weights)?;
            last = Some((nu, nv));
            Ok(value)
        });
        if !outcome.accepted {
            step = 0.0;
            if slope > 0.0 {
                failures += 1;
            }
            break;
        }
        let (nu, nv) = last.expect("accepted trial was evaluated");
        u = nu;
        v = nv;
        step = outcome.step;
    }

    let l = u.transpose() * &cxy * &v;
    Ok(CostUpdate {
        u,
        v,
        l,
        step,
        slope,
        line_search_failures: failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{gram_schmidt_g, polar_retraction, tangency_residual, MetricMatrix};
    use crate::testutil::{random_matrix, random_spd, random_vector, rng};

    struct Instance {
        cx: DMatrix<f64>,
        u: DMatrix<f64>,
        f_x: DVector<f64>,
        z_x: DVector<f64>,
        z_y: DVector<f64>,
        w: BrockettWeights,
    }

    fn instance(seed: u64, n: usize, p: usize) -> Instance {
        let mut r = rng(seed);
        let cx = random_spd(&mut r, n);
        let metric = MetricMatrix::new(cx.clone()).unwrap();
        let u = gram_schmidt_g(&random_matrix(&mut r, n, p), &metric)
            .unwrap()
            .into_matrix();
        let x = random_vector(&mut r, n);
        let z_x = u.tr_mul(&x);
        let f_x = cx.clone().try_inverse().unwrap() * &x - &u * &z_x;
        let z_y = random_vector(&mut r, p);
        Instance {
            cx,
            u,
            f_x,
            z_x,
            z_y,
            w: BrockettWeights::linear(p),
        }
    }

    #[test]
    fn zero_zy_gives_zero_gradient() {
        let inst = instance(51, 6, 3);
        let xi = stiefel_gradient(&inst.u, &inst.f_x, &inst.z_x, &DVector::zeros(3), &inst.w)
            .unwrap();
        assert_eq!(xi.norm(), 0.0);
    }

    #[test]
    fn gradient_is_tangent() {
        for seed in 0..10 {
            let inst = instance(60 + seed, 7, 3);
            let xi = stiefel_gradient(&inst.u, &inst.f_x, &inst.z_x, &inst.z_y, &inst.w).unwrap();
            let g = MetricMatrix::new(inst.cx.clone()).unwrap();
            let res = tangency_residual(&inst.u, &g, &xi).unwrap();
            assert!(res <= 1e-10 * xi.norm().max(1.0), "residual {res}");
        }
    }

    #[test]
    fn skew_only_gradient() {
        let inst = instance(52, 5, 2);
        let g = MetricMatrix::new(inst.cx.clone()).unwrap();
        let z_y = DVector::from_vec(vec![1.0, 0.0]);
        let z_x = inst.w.apply(&z_y) * 2.0;
        let xi = stiefel_gradient(&inst.u, &DVector::zeros(5), &z_x, &z_y, &inst.w).unwrap();
        assert!(tangency_residual(&inst.u, &g, &xi).unwrap() <= 1e-12);
    }

    #[test]
    fn rank_one_gradient_matches_general_formula() {
        for seed in 0..10 {
            let mut r = rng(100 + seed);
            let n = 6;
            let m = 5;
            let p = 3;
            let cx = random_spd(&mut r, n);
            let cx_inv = cx.clone().try_inverse().unwrap();
            let u = random_matrix(&mut r, n, p);
            let v = random_matrix(&mut r, m, p);
            let x = random_vector(&mut r, n);
            let y = random_vector(&mut r, m);
            let w = BrockettWeights::linear(p);
            let z_x = u.tr_mul(&x);
            let z_y = v.tr_mul(&y);
            let f_x = &cx_inv * &x - &u * &z_x;
            let xi = stiefel_gradient(&u, &f_x, &z_x, &z_y, &w).unwrap();
            let general = brockett_gradient(&u, &v, &cx_inv, &(&x * y.transpose()), &w).unwrap();
            assert!((xi - &general).norm() <= 1e-9 * general.norm().max(1.0));
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let inst = instance(53, 6, 3);
        let out = efficient_polar_update(&inst.u, &inst.f_x, &inst.z_x, &inst.z_y, &inst.w, 0.0, 1.0)
            .unwrap();
        assert_eq!(out, inst.u);
    }

    fn check_against_polar(inst: &Instance, zeta: f64) -> f64 {
        let xi = stiefel_gradient(&inst.u, &inst.f_x, &inst.z_x, &inst.z_y, &inst.w).unwrap();
        let fq = inst.f_x.dot(&(&inst.cx * &inst.f_x));
        let fast =
            efficient_polar_update(&inst.u, &inst.f_x, &inst.z_x, &inst.z_y, &inst.w, zeta, fq)
                .unwrap();
        let general = polar_retraction(&inst.u, &xi, &inst.cx, zeta).unwrap();
        (fast - &general).norm() / general.norm()
    }

    #[test]
    fn matches_general_polar() {
        for seed in 0..30 {
            let inst = instance(200 + seed, 10, 4);
            for zeta in [0.05, 0.5, 2.0] {
                let err = check_against_polar(&inst, zeta);
                assert!(err <= 1e-10, "seed {seed} zeta {zeta}: {err}");
            }
        }
    }

    #[test]
    fn degenerate_branch_matches_general_polar() {
        let mut inst = instance(54, 8, 3);
        inst.z_y = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        inst.z_x = inst.w.apply(&inst.z_y) * 0.7;
        let err = check_against_polar(&inst, 0.8);
        assert!(err <= 1e-10, "{err}");
    }
}
