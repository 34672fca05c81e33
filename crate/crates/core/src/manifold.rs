//! Geometry of generalized Stiefel manifolds `St_G(p, d) = {X : XᵀGX = I_p}` and
//! generalized orthogonal groups (the square case `d = p`).
//!
//! The tangent space at `X` is `{Z : XᵀGZ + ZᵀGX = 0}`. Two retractions are
//! provided: the polar retraction
//!
//! ```text
//! R_X(ζξ) = (X + ζξ)(I_p + ζ² ξᵀGξ)^{-1/2}
//! ```
//!
//! and a QR-type retraction that G-orthonormalizes the columns of `X + ζξ`
//! with a modified Gram–Schmidt sweep under `⟨a, b⟩_G = aᵀGb`.
//!
//! No tangent-space projector is exposed: callers build gradients that are
//! tangent by construction.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dims, CcaError, Result};

/// Relative threshold under which a column is declared collapsed during
/// G-orthonormalization.
const RANK_TOL: f64 = 1e-12;

/// Acceptance tolerances for the manifold predicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub feas: f64,
    pub tan: f64,
    pub sym: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feas: 1e-8,
            tan: 1e-8,
            sym: 1e-12,
        }
    }
}

/// Symmetric positive-definite metric `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricMatrix {
    g: DMatrix<f64>,
}

impl MetricMatrix {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(g, Tolerances::default().sym)
    }

    /// Validates symmetry (`‖G − Gᵀ‖_F ≤ tol_sym‖G‖_F`) and positive
    /// definiteness (Cholesky success).
    pub fn with_tolerance(g: DMatrix<f64>, tol_sym: f64) -> Result<Self> {
        if !g.is_square() {
            return Err(CcaError::DimensionMismatch {
                context: "metric matrix",
                expected: "square".into(),
                actual: format!("{}x{}", g.nrows(), g.ncols()),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(CcaError::NonFinite("metric matrix"));
        }
        if (&g - g.transpose()).norm() > tol_sym * g.norm() {
            return Err(CcaError::NotSymmetric("G"));
        }
        if g.clone().cholesky().is_none() {
            return Err(CcaError::NotPositiveDefinite("G"));
        }
        Ok(Self { g })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            g: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.g
    }
}

/// A point `X` of `St_G(p, d)` together with the metric it is feasible under.
#[derive(Debug, Clone)]
pub struct GStiefelPoint<'g> {
    x: DMatrix<f64>,
    metric: &'g MetricMatrix,
}

impl<'g> GStiefelPoint<'g> {
    pub fn new(x: DMatrix<f64>, metric: &'g MetricMatrix, tol_feas: f64) -> Result<Self> {
        if x.ncols() > x.nrows() {
            return Err(CcaError::InvalidArgument(format!(
                "Stiefel point needs p <= d, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        let error = feasibility_error(&x, metric)?;
        if !(error <= tol_feas) {
            return Err(CcaError::Infeasible {
                error,
                tol: tol_feas,
            });
        }
        Ok(Self { x, metric })
    }

    pub(crate) fn new_unchecked(x: DMatrix<f64>, metric: &'g MetricMatrix) -> Self {
        Self { x, metric }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn metric(&self) -> &'g MetricMatrix {
        self.metric
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.x
    }
}

/// A tangent vector `Z` at a [`GStiefelPoint`].
#[derive(Debug, Clone)]
pub struct TangentVector<'a> {
    z: DMatrix<f64>,
    base: &'a GStiefelPoint<'a>,
}

impl<'a> TangentVector<'a> {
    /// Accepts `z` when `‖XᵀGZ + ZᵀGX‖_F ≤ tol_tan · max(1, ‖Z‖_F)`.
    pub fn new(base: &'a GStiefelPoint<'a>, z: DMatrix<f64>, tol_tan: f64) -> Result<Self> {
        let residual = tangency_residual(base.matrix(), base.metric(), &z)?;
        let tol = tol_tan * z.norm().max(1.0);
        if !(residual <= tol) {
            return Err(CcaError::NotTangent { residual, tol });
        }
        Ok(Self { z, base })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn base(&self) -> &'a GStiefelPoint<'a> {
        self.base
    }

    /// `Ω = XᵀGZ`. In the square case `Z = XΩ` and `Ω` is skew-symmetric.
    pub fn skew_part(&self) -> DMatrix<f64> {
        self.base.matrix().transpose() * self.base.metric().matrix() * &self.z
    }
}

/// `‖XᵀGX − I_p‖_F`.
pub fn feasibility_error(x: &DMatrix<f64>, g: &MetricMatrix) -> Result<f64> {
    check_dims("feasibility_error", (g.dim(), x.ncols()), (x.nrows(), x.ncols()))?;
    let p = x.ncols();
    let gram = x.transpose() * g.matrix() * x;
    Ok((gram - DMatrix::identity(p, p)).norm())
}

/// `‖XᵀGZ + ZᵀGX‖_F`.
pub fn tangency_residual(x: &DMatrix<f64>, g: &MetricMatrix, z: &DMatrix<f64>) -> Result<f64> {
    check_dims("tangency_residual", (g.dim(), x.ncols()), (x.nrows(), x.ncols()))?;
    check_dims("tangency_residual", x.shape(), z.shape())?;
    let m = x.transpose() * g.matrix() * z;
    Ok((&m + m.transpose()).norm())
}

/// Polar retraction on bare matrices. No feasibility or tangency checks.
pub fn polar_retraction(
    x: &DMatrix<f64>,
    xi: &DMatrix<f64>,
    g: &DMatrix<f64>,
    zeta: f64,
) -> Result<DMatrix<f64>> {
    if !zeta.is_finite() {
        return Err(CcaError::NonFinite("retraction step"));
    }
    if zeta == 0.0 {
        return Ok(x.clone());
    }
    let p = x.ncols();
    let mut gram = xi.transpose() * g * xi;
    symmetrize(&mut gram);
    let m = DMatrix::identity(p, p) + gram * (zeta * zeta);
    let inv_sqrt = spd_inv_sqrt(&m)?;
    Ok((x + xi * zeta) * inv_sqrt)
}

/// `R_X(ζξ) = (X + ζξ)(I_p + ζ²ξᵀGξ)^{-1/2}`.
pub fn polar_retract<'g>(
    x: &GStiefelPoint<'g>,
    xi: &TangentVector<'_>,
    zeta: f64,
) -> Result<GStiefelPoint<'g>> {
    let out = polar_retraction(x.matrix(), xi.matrix(), x.metric().matrix(), zeta)?;
    Ok(GStiefelPoint::new_unchecked(out, x.metric()))
}

/// QR-type retraction: G-orthonormal factor of `X + ζξ` with positive
/// triangular diagonal.
pub fn oblique_qr_retract<'g>(
    x: &GStiefelPoint<'g>,
    xi: &TangentVector<'_>,
    zeta: f64,
) -> Result<GStiefelPoint<'g>> {
    if !zeta.is_finite() {
        return Err(CcaError::NonFinite("retraction step"));
    }
    let moved = x.matrix() + xi.matrix() * zeta;
    let q = oblique_qr(&moved, x.metric().matrix())?;
    Ok(GStiefelPoint::new_unchecked(q, x.metric()))
}

/// Gram–Schmidt under the `G` inner product, producing a feasible point with
/// the same column span as `a`.
pub fn gram_schmidt_g<'g>(a: &DMatrix<f64>, g: &'g MetricMatrix) -> Result<GStiefelPoint<'g>> {
    check_dims("gram_schmidt_g", (g.dim(), a.ncols()), a.shape())?;
    if a.ncols() > a.nrows() {
        return Err(CcaError::RankDeficient { column: a.nrows() });
    }
    let q = oblique_qr(a, g.matrix())?;
    Ok(GStiefelPoint::new_unchecked(q, g))
}

/// Modified Gram–Schmidt with one re-orthogonalization pass under `⟨a,b⟩_G`.
///
/// Returns `Q` with `QᵀGQ = I` and `A = QR`, `R` upper triangular with a
/// positive diagonal.
pub fn oblique_qr(a: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (d, p) = a.shape();
    check_dims("oblique_qr", (d, d), g.shape())?;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(CcaError::NonFinite("oblique_qr input"));
    }
    let mut q = DMatrix::<f64>::zeros(d, p);
    // G·q_i for the finished columns
    let mut gq = DMatrix::<f64>::zeros(d, p);
    for j in 0..p {
        let mut v: DVector<f64> = a.column(j).into_owned();
        let g_v = g * &v;
        let norm0 = v.dot(&g_v).max(0.0).sqrt();
        for _pass in 0..2 {
            for i in 0..j {
                let r = gq.column(i).dot(&v);
                v.axpy(-r, &q.column(i), 1.0);
            }
        }
        let g_v = g * &v;
        let norm = v.dot(&g_v).max(0.0).sqrt();
        if !norm.is_finite() || norm <= RANK_TOL * norm0 || norm == 0.0 {
            return Err(CcaError::RankDeficient { column: j });
        }
        q.set_column(j, &(v / norm));
        gq.set_column(j, &(g_v / norm));
    }
    Ok(q)
}

/// Inverse square root of a symmetric positive-definite matrix through its
/// symmetric eigendecomposition. The result is symmetric.
pub fn spd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(CcaError::DimensionMismatch {
            context: "spd_inv_sqrt",
            expected: "square".into(),
            actual: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(CcaError::NonFinite("spd_inv_sqrt input"));
    }
    let scale = m.norm();
    if (m - m.transpose()).norm() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(CcaError::NotSymmetric("M"));
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let max_eig = eig.eigenvalues.amax();
    if eig
        .eigenvalues
        .iter()
        .any(|&l| !(l > 0.0) || l <= f64::EPSILON * max_eig)
    {
        return Err(CcaError::NotPositiveDefinite("M"));
    }
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| {
        q[(i, j)] / eig.eigenvalues[j].sqrt()
    });
    let mut r = scaled * q.transpose();
    symmetrize(&mut r);
    Ok(r)
}

/// Closed form of `(βI + zzᵀ)^{-1/2} = β^{-1/2}(I − ρ̃ zzᵀ/zᵀz)` with
/// `ρ̃ = 1 − (1 + zᵀz/β)^{-1/2}`.
pub fn rank_one_inv_sqrt(beta: f64, z: &DVector<f64>) -> DMatrix<f64> {
    let p = z.len();
    let s = z.norm_squared();
    let mut out = DMatrix::identity(p, p);
    if s > 0.0 {
        let rho = rank_one_shrink(s / beta);
        out.ger(-rho / s, z, z, 1.0);
    }
    out * beta.powf(-0.5)
}

/// Closed form of `(βI + zzᵀ)^{-1} = β^{-1}(I − zzᵀ/(β + zᵀz))`.
pub fn rank_one_inverse(beta: f64, z: &DVector<f64>) -> DMatrix<f64> {
    let p = z.len();
    let mut out = DMatrix::identity(p, p);
    out.ger(-1.0 / (beta + z.norm_squared()), z, z, 1.0);
    out / beta
}

/// `1 − (1 + α)^{-1/2}` evaluated without cancellation for small `α`.
pub(crate) fn rank_one_shrink(alpha: f64) -> f64 {
    let root = (1.0 + alpha).sqrt();
    alpha / (root * (1.0 + root))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, random_spd, rng};

    fn random_point(
        rng: &mut rand_chacha::ChaCha8Rng,
        d: usize,
        p: usize,
        g: &MetricMatrix,
    ) -> DMatrix<f64> {
        gram_schmidt_g(&random_matrix(rng, d, p), g)
            .unwrap()
            .into_matrix()
    }

    /// Tangent vector built as `XΩ + X⊥K` with `X⊥` G-orthogonal to `X`.
    fn random_tangent(
        rng: &mut rand_chacha::ChaCha8Rng,
        x: &DMatrix<f64>,
        g: &MetricMatrix,
    ) -> DMatrix<f64> {
        let (d, p) = x.shape();
        let w = random_matrix(rng, p, p);
        let omega = &w - w.transpose();
        let raw = random_matrix(rng, d, p);
        let perp = &raw - x * (x.transpose() * g.matrix() * &raw);
        x * omega + perp
    }

    #[test]
    fn feasibility_of_identity_columns() {
        let g = MetricMatrix::identity(4);
        let x = DMatrix::<f64>::identity(4, 2);
        assert_eq!(feasibility_error(&x, &g).unwrap(), 0.0);
    }

    #[test]
    fn feasibility_of_scaled_column() {
        let g = MetricMatrix::identity(3);
        let x = DMatrix::<f64>::identity(3, 1) * 2.0;
        assert!((feasibility_error(&x, &g).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn feasibility_rejects_bad_dims() {
        let g = MetricMatrix::identity(3);
        let x = DMatrix::<f64>::identity(4, 1);
        assert!(matches!(
            feasibility_error(&x, &g),
            Err(CcaError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn orthonormalized_random_is_feasible() {
        let mut r = rng(1);
        for _ in 0..10 {
            let g = MetricMatrix::new(random_spd(&mut r, 7)).unwrap();
            let a = random_matrix(&mut r, 7, 3);
            let q = gram_schmidt_g(&a, &g).unwrap();
            // direct multiplication
            let gram = q.matrix().transpose() * g.matrix() * q.matrix();
            assert!((gram - DMatrix::identity(3, 3)).norm() <= 1e-12);
        }
    }

    #[test]
    fn metric_rejects_indefinite_and_asymmetric() {
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(
            MetricMatrix::new(indefinite),
            Err(CcaError::NotPositiveDefinite("G"))
        );
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.0, 2.0]);
        assert_eq!(MetricMatrix::new(asym), Err(CcaError::NotSymmetric("G")));
    }

    #[test]
    fn polar_zero_step_is_identity() {
        let mut r = rng(2);
        let g = MetricMatrix::new(random_spd(&mut r, 5)).unwrap();
        let x = random_point(&mut r, 5, 2, &g);
        let xi = random_tangent(&mut r, &x, &g);
        let point = GStiefelPoint::new(x.clone(), &g, 1e-8).unwrap();
        let tangent = TangentVector::new(&point, xi, 1e-8).unwrap();
        assert_eq!(polar_retract(&point, &tangent, 0.0).unwrap().matrix(), &x);
    }

    #[test]
    fn polar_quarter_turn() {
        let g = MetricMatrix::identity(2);
        let point = GStiefelPoint::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), &g, 1e-12)
            .unwrap();
        let tangent =
            TangentVector::new(&point, DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), 1e-12)
                .unwrap();
        let out = polar_retract(&point, &tangent, 1.0).unwrap();
        let h = 0.5f64.sqrt();
        assert!((out.matrix() - DMatrix::from_column_slice(2, 1, &[h, h])).norm() < 1e-15);
    }

    #[test]
    fn polar_stays_feasible() {
        let mut r = rng(3);
        for _ in 0..20 {
            let g = MetricMatrix::new(random_spd(&mut r, 6)).unwrap();
            let x = random_point(&mut r, 6, 3, &g);
            let xi = random_tangent(&mut r, &x, &g);
            let point = GStiefelPoint::new(x, &g, 1e-8).unwrap();
            let tangent = TangentVector::new(&point, xi, 1e-8).unwrap();
            let out = polar_retract(&point, &tangent, 0.1).unwrap();
            assert!(feasibility_error(out.matrix(), &g).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn qr_zero_step_returns_point() {
        let mut r = rng(4);
        let g = MetricMatrix::new(random_spd(&mut r, 4)).unwrap();
        let x = random_point(&mut r, 4, 4, &g);
        let point = GStiefelPoint::new(x.clone(), &g, 1e-8).unwrap();
        let tangent = TangentVector::new(&point, DMatrix::zeros(4, 4), 1e-8).unwrap();
        let out = oblique_qr_retract(&point, &tangent, 0.0).unwrap();
        assert!((out.matrix() - &x).norm() < 1e-12);
    }

    #[test]
    fn qr_removes_scaling() {
        let g = MetricMatrix::identity(2);
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let q = oblique_qr(&a, g.matrix()).unwrap();
        assert_eq!(q, DMatrix::identity(2, 2));
    }

    #[test]
    fn qr_square_case_feasible() {
        let mut r = rng(5);
        for _ in 0..20 {
            let g = MetricMatrix::new(random_spd(&mut r, 4)).unwrap();
            let x = random_point(&mut r, 4, 4, &g);
            let xi = random_tangent(&mut r, &x, &g);
            let point = GStiefelPoint::new(x, &g, 1e-8).unwrap();
            let tangent = TangentVector::new(&point, xi, 1e-8).unwrap();
            let omega = tangent.skew_part();
            assert!((&omega + omega.transpose()).norm() < 1e-10);
            let out = oblique_qr_retract(&point, &tangent, 0.05).unwrap();
            assert!(feasibility_error(out.matrix(), &g).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn qr_detects_rank_deficiency() {
        let g = MetricMatrix::identity(3);
        let a = DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert_eq!(
            gram_schmidt_g(&a, &g).unwrap_err(),
            CcaError::RankDeficient { column: 1 }
        );
    }

    #[test]
    fn gram_schmidt_textbook() {
        let g = MetricMatrix::identity(2);
        let a = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let q = gram_schmidt_g(&a, &g).unwrap();
        assert!((q.matrix() - DMatrix::<f64>::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn gram_schmidt_keeps_orthonormal_input() {
        let mut r = rng(6);
        let g = MetricMatrix::new(random_spd(&mut r, 5)).unwrap();
        let x = random_point(&mut r, 5, 3, &g);
        let again = gram_schmidt_g(&x, &g).unwrap();
        assert!((again.matrix() - &x).norm() < 1e-12);
    }

    #[test]
    fn inv_sqrt_examples() {
        let i3 = DMatrix::<f64>::identity(3, 3);
        assert!((spd_inv_sqrt(&i3).unwrap() - &i3).norm() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = spd_inv_sqrt(&d).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0 / 3.0]));
        assert!((r - expected).norm() < 1e-15);
    }

    #[test]
    fn inv_sqrt_random_postcondition() {
        let mut r = rng(7);
        for _ in 0..10 {
            let m = random_spd(&mut r, 5);
            let inv = spd_inv_sqrt(&m).unwrap();
            assert!((&inv - inv.transpose()).norm() == 0.0);
            assert!((&inv * &m * &inv - DMatrix::<f64>::identity(5, 5)).norm() <= 1e-10);
        }
    }

    #[test]
    fn inv_sqrt_rejects_non_spd() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(spd_inv_sqrt(&m), Err(CcaError::NotPositiveDefinite("M")));
    }

    #[test]
    fn rank_one_closed_forms_match_general() {
        let mut r = rng(8);
        for beta in [0.5, 0.98, 1.0] {
            let z = DVector::from_column_slice(random_matrix(&mut r, 4, 1).as_slice());
            let g = DMatrix::identity(4, 4) * beta + &z * z.transpose();
            assert!((rank_one_inv_sqrt(beta, &z) - spd_inv_sqrt(&g).unwrap()).norm() < 1e-12);
            let inv = g.clone().try_inverse().unwrap();
            assert!((rank_one_inverse(beta, &z) - inv).norm() < 1e-12);
        }
        let zero = DVector::zeros(3);
        assert!(
            (rank_one_inv_sqrt(0.81, &zero) - DMatrix::<f64>::identity(3, 3) / 0.9).norm() < 1e-15
        );
    }

    #[test]
    fn tangent_rejects_normal_direction() {
        let g = MetricMatrix::identity(2);
        let point =
            GStiefelPoint::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), &g, 1e-12).unwrap();
        let normal = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(matches!(
            TangentVector::new(&point, normal, 1e-8),
            Err(CcaError::NotTangent { .. })
        ));
    }
}
