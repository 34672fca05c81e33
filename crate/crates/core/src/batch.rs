//! Exact batch solution of the fixed-rank CCA trace problem
//!
//! ```text
//! max tr(UᵀC_xyVN)  s.t.  UᵀC_xU = I_p,  VᵀC_yV = I_p
//! ```
//!
//! solved by whitening with Cholesky factors and taking the SVD of the
//! whitened cross-covariance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, CcaError, Result};

/// Ratio of extreme Cholesky-factor diagonal entries above which a
/// covariance is rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Diagonal weights `N₁ > N₂ > … > N_p > 0` of the Brockett cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BrockettWeights(Vec<f64>);

impl BrockettWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(CcaError::InvalidArgument("Brockett weights are empty".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(CcaError::InvalidArgument(
                "Brockett weights must be finite and positive".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] <= w[1]) {
            return Err(CcaError::InvalidArgument(
                "Brockett weights must be strictly decreasing".into(),
            ));
        }
        Ok(Self(values))
    }

    /// `diag(p, p−1, …, 1) / p`.
    pub fn linear(p: usize) -> Self {
        let pf = p as f64;
        Self((0..p).map(|i| (p - i) as f64 / pf).collect())
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.to_vector())
    }

    /// `M·N`, scaling column `j` by `N_j`.
    pub fn scale_columns(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for (j, w) in self.0.iter().enumerate() {
            out.column_mut(j).scale_mut(*w);
        }
        out
    }

    /// `N·M`, scaling row `i` by `N_i`.
    pub fn scale_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for (i, w) in self.0.iter().enumerate() {
            out.row_mut(i).scale_mut(*w);
        }
        out
    }

    /// `N·v` elementwise.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(v.len(), |i, _| self.0[i] * v[i])
    }
}

impl TryFrom<Vec<f64>> for BrockettWeights {
    type Error = CcaError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<BrockettWeights> for Vec<f64> {
    fn from(w: BrockettWeights) -> Self {
        w.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSolution {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// `UᵀC_xyV`, diagonal up to rounding.
    pub l: DMatrix<f64>,
    /// Canonical correlations, nonincreasing and nonnegative.
    pub sigma: DVector<f64>,
}

impl BatchSolution {
    pub fn cost(&self, weights: &BrockettWeights) -> f64 {
        weights
            .values()
            .iter()
            .zip(self.l.diagonal().iter())
            .map(|(n, l)| n * l)
            .sum()
    }
}

fn factor(c: &DMatrix<f64>, name: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(CcaError::NonFinite(name));
    }
    let chol = Cholesky::new(c.clone()).ok_or(CcaError::NotPositiveDefinite(name))?;
    let diag = chol.l_dirty().diagonal();
    let ratio = diag.max() / diag.min();
    if !(ratio <= CONDITION_LIMIT) {
        return Err(CcaError::IllConditioned {
            name,
            ratio,
            limit: CONDITION_LIMIT,
        });
    }
    Ok(chol)
}

/// Solves the rank-`p` CCA problem for the given covariances.
///
/// Canonical vectors are sign-normalized so that the largest-magnitude entry
/// of each column of `U` is positive.
pub fn solve_batch(
    cx: &DMatrix<f64>,
    cy: &DMatrix<f64>,
    cxy: &DMatrix<f64>,
    p: usize,
) -> Result<BatchSolution> {
    let n = cx.nrows();
    let m = cy.nrows();
    check_dims("solve_batch Cx", (n, n), cx.shape())?;
    check_dims("solve_batch Cy", (m, m), cy.shape())?;
    check_dims("solve_batch Cxy", (n, m), cxy.shape())?;
    if p == 0 || p > n.min(m) {
        return Err(CcaError::InvalidArgument(format!(
            "rank {p} must be in 1..={}",
            n.min(m)
        )));
    }
    let lx = factor(cx, "Cx")?.unpack();
    let ly = factor(cy, "Cy")?.unpack();

    // K = Lx⁻¹ Cxy Ly⁻ᵀ
    let a = lx
        .solve_lower_triangular(cxy)
        .ok_or(CcaError::NotPositiveDefinite("Cx"))?;
    let k = ly
        .solve_lower_triangular(&a.transpose())
        .ok_or(CcaError::NotPositiveDefinite("Cy"))?
        .transpose();

    let svd = k.svd(true, true);
    let left = svd.u.as_ref().expect("requested U");
    let right_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));

    let mut p_left = DMatrix::zeros(n, p);
    let mut q_right = DMatrix::zeros(m, p);
    for (slot, &idx) in order.iter().take(p).enumerate() {
        p_left.set_column(slot, &left.column(idx));
        q_right.set_column(slot, &right_t.row(idx).transpose());
    }

    let lxt = lx.transpose();
    let lyt = ly.transpose();
    let mut u = lxt
        .solve_upper_triangular(&p_left)
        .ok_or(CcaError::NotPositiveDefinite("Cx"))?;
    let mut v = lyt
        .solve_upper_triangular(&q_right)
        .ok_or(CcaError::NotPositiveDefinite("Cy"))?;

    for j in 0..p {
        let col = u.column(j);
        let pivot = col.iter().copied().fold(0.0f64, |acc, x| {
            if x.abs() > acc.abs() {
                x
            } else {
                acc
            }
        });
        if pivot < 0.0 {
            u.column_mut(j).neg_mut();
            v.column_mut(j).neg_mut();
        }
    }

    let mut l = u.transpose() * cxy * &v;
    for j in 0..p {
        if l[(j, j)] < 0.0 {
            v.column_mut(j).neg_mut();
            l.column_mut(j).neg_mut();
        }
    }
    let sigma = l.diagonal();
    Ok(BatchSolution { u, v, l, sigma })
}

/// `tr(UᵀC_xyVN)`.
pub fn brockett_cost(
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
    cxy: &DMatrix<f64>,
    weights: &BrockettWeights,
) -> Result<f64> {
    let p = weights.rank();
    check_dims("brockett_cost U", (cxy.nrows(), p), u.shape())?;
    check_dims("brockett_cost V", (cxy.ncols(), p), v.shape())?;
    let cv = cxy * v;
    Ok((0..p)
        .map(|j| weights.values()[j] * u.column(j).dot(&cv.column(j)))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, random_spd, rng};

    fn diag3() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let i = DMatrix::<f64>::identity(3, 3);
        let cxy = DMatrix::from_diagonal(&DVector::from_vec(vec![0.9, 0.5, 0.1]));
        (i.clone(), i, cxy)
    }

    #[test]
    fn weights_validation() {
        assert!(BrockettWeights::new(vec![2.0, 1.0]).is_ok());
        assert!(BrockettWeights::new(vec![1.0, 1.0]).is_err());
        assert!(BrockettWeights::new(vec![1.0, 0.0]).is_err());
        assert!(BrockettWeights::new(vec![]).is_err());
        assert_eq!(BrockettWeights::linear(4).values(), &[1.0, 0.75, 0.5, 0.25]);
    }

    #[test]
    fn diagonal_pencil() {
        let (cx, cy, cxy) = diag3();
        let sol = solve_batch(&cx, &cy, &cxy, 2).unwrap();
        assert!((sol.sigma[0] - 0.9).abs() < 1e-14);
        assert!((sol.sigma[1] - 0.5).abs() < 1e-14);
        // span(U) = span(e1, e2)
        assert!(sol.u.row(2).norm() < 1e-14);
        assert!((&sol.l - DMatrix::from_diagonal(&sol.sigma)).norm() < 1e-14);
    }

    #[test]
    fn zero_coupling() {
        let cx = DMatrix::<f64>::identity(3, 3);
        let sol = solve_batch(&cx, &cx, &DMatrix::zeros(3, 3), 2).unwrap();
        assert_eq!(sol.sigma.norm(), 0.0);
        assert_eq!(sol.l.norm(), 0.0);
        let gram = sol.u.transpose() * &cx * &sol.u;
        assert!((gram - DMatrix::<f64>::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn cost_examples() {
        let (cx, cy, cxy) = diag3();
        let sol = solve_batch(&cx, &cy, &cxy, 2).unwrap();
        let n = BrockettWeights::new(vec![2.0, 1.0]).unwrap();
        let c = brockett_cost(&sol.u, &sol.v, &cxy, &n).unwrap();
        assert!((c - 2.3).abs() < 1e-14);
        let neg = brockett_cost(&sol.u, &(-&sol.v), &cxy, &n).unwrap();
        assert!((neg + c).abs() < 1e-15);
        assert!((sol.cost(&n) - c).abs() < 1e-14);
    }

    #[test]
    fn constraints_hold_on_random_instances() {
        let mut r = rng(11);
        for _ in 0..20 {
            let cx = random_spd(&mut r, 6);
            let cy = random_spd(&mut r, 5);
            let cxy = random_matrix(&mut r, 6, 5) * 0.3;
            let sol = solve_batch(&cx, &cy, &cxy, 3).unwrap();
            let ex = (sol.u.transpose() * &cx * &sol.u - DMatrix::<f64>::identity(3, 3)).norm();
            let ey = (sol.v.transpose() * &cy * &sol.v - DMatrix::<f64>::identity(3, 3)).norm();
            assert!(ex < 1e-8 && ey < 1e-8);
            let off = &sol.l - DMatrix::from_diagonal(&sol.l.diagonal());
            assert!(off.norm() < 1e-8);
            assert!(sol.sigma.iter().all(|s| *s >= 0.0));
            assert!(sol.sigma[0] >= sol.sigma[1] && sol.sigma[1] >= sol.sigma[2]);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cx = DMatrix::<f64>::identity(3, 3);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, 1.0]));
        assert_eq!(
            solve_batch(&cx, &bad, &DMatrix::zeros(3, 3), 1).unwrap_err(),
            CcaError::NotPositiveDefinite("Cy")
        );
        let ill = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-30, 1.0]));
        assert!(matches!(
            solve_batch(&ill, &cx, &DMatrix::zeros(3, 3), 1).unwrap_err(),
            CcaError::IllConditioned { name: "Cx", .. }
        ));
        assert!(solve_batch(&cx, &cx, &DMatrix::zeros(3, 3), 4).is_err());
        assert!(solve_batch(&cx, &cx, &DMatrix::zeros(3, 2), 1).is_err());
    }
}
