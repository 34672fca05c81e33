#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(r))
}

pub fn gaussian_vec(r: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| StandardNormal.sample(r))
}

/// Well-conditioned SPD matrix `AAᵀ/d + ½I`.
pub fn spd(r: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = gaussian(r, d, d);
    let m = &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5;
    (&m + m.transpose()) * 0.5
}

/// Joint covariance of `[x; y]` split into its blocks.
pub fn joint_covariance(
    r: &mut ChaCha8Rng,
    n: usize,
    m: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let c = spd(r, n + m);
    (
        c.view((0, 0), (n, n)).into_owned(),
        c.view((n, n), (m, m)).into_owned(),
        c.view((0, n), (n, m)).into_owned(),
    )
}

/// Projection of `z` onto the tangent space at `x`: `z − X·sym(XᵀGZ)`.
pub fn project_tangent(x: &DMatrix<f64>, g: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let m = x.transpose() * g * z;
    z - x * ((&m + m.transpose()) * 0.5)
}

pub fn feasibility(x: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let p = x.ncols();
    (x.transpose() * g * x - DMatrix::<f64>::identity(p, p)).norm()
}
