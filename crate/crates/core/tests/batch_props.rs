mod common;

use common::{gaussian, joint_covariance, project_tangent, rng};
use manifold_cca::batch::{brockett_cost, solve_batch, BrockettWeights};
use manifold_cca::manifold::polar_retraction;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 2usize..8, 2usize..8)
        .prop_flat_map(|(seed, n, m)| (Just(seed), Just(n), Just(m), 1..=n.min(m)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solution_is_feasible_and_sorted((seed, n, m, p) in instance()) {
        let mut r = rng(seed);
        let (cx, cy, cxy) = joint_covariance(&mut r, n, m);
        let sol = solve_batch(&cx, &cy, &cxy, p).unwrap();
        let id = DMatrix::<f64>::identity(p, p);
        prop_assert!((sol.u.transpose() * &cx * &sol.u - &id).norm() <= 1e-9);
        prop_assert!((sol.v.transpose() * &cy * &sol.v - &id).norm() <= 1e-9);
        // L is diagonal with the canonical correlations
        let l = sol.u.transpose() * &cxy * &sol.v;
        prop_assert!((&l - DMatrix::from_diagonal(&sol.sigma)).norm() <= 1e-9);
        for w in sol.sigma.as_slice().windows(2) {
            prop_assert!(w[0] >= w[1] - 1e-12);
        }
        prop_assert!(sol.sigma.iter().all(|&s| (-1e-12..=1.0 + 1e-9).contains(&s)));
    }

    #[test]
    fn no_nearby_feasible_point_beats_the_solution((seed, n, m, p) in instance()) {
        let mut r = rng(seed);
        let (cx, cy, cxy) = joint_covariance(&mut r, n, m);
        let w = BrockettWeights::linear(p);
        let sol = solve_batch(&cx, &cy, &cxy, p).unwrap();
        let best = brockett_cost(&sol.u, &sol.v, &cxy, &w).unwrap();
        for k in 0..10 {
            let zeta = 0.01 * (k + 1) as f64;
            let xu = project_tangent(&sol.u, &cx, &gaussian(&mut r, n, p));
            let xv = project_tangent(&sol.v, &cy, &gaussian(&mut r, m, p));
            let u = polar_retraction(&sol.u, &xu, &cx, zeta).unwrap();
            let v = polar_retraction(&sol.v, &xv, &cy, zeta).unwrap();
            prop_assert!(brockett_cost(&u, &v, &cxy, &w).unwrap() <= best + 1e-9);
        }
    }

    #[test]
    fn correlations_are_invariant_to_view_transforms((seed, n, m, p) in instance()) {
        let mut r = rng(seed);
        let (cx, cy, cxy) = joint_covariance(&mut r, n, m);
        let a = gaussian(&mut r, n, n) + DMatrix::identity(n, n) * (n as f64);
        let b = gaussian(&mut r, m, m) + DMatrix::identity(m, m) * (m as f64);
        let cx2 = &a * &cx * a.transpose();
        let cy2 = &b * &cy * b.transpose();
        let cxy2 = &a * &cxy * b.transpose();
        let cx2 = (&cx2 + cx2.transpose()) * 0.5;
        let cy2 = (&cy2 + cy2.transpose()) * 0.5;
        let s1 = solve_batch(&cx, &cy, &cxy, p).unwrap();
        let s2 = solve_batch(&cx2, &cy2, &cxy2, p).unwrap();
        prop_assert!((&s1.sigma - &s2.sigma).norm() <= 1e-8);
        let w = BrockettWeights::linear(p);
        prop_assert!((s1.cost(&w) - s2.cost(&w)).abs() <= 1e-8);
    }
}

#[test]
fn rank_above_dimension_is_rejected() {
    let mut r = rng(1);
    let (cx, cy, cxy) = joint_covariance(&mut r, 3, 2);
    assert!(solve_batch(&cx, &cy, &cxy, 3).is_err());
    assert!(solve_batch(&cx, &cy, &cxy, 0).is_err());
}
