use thiserror::Error;

/// Errors raised by the numerical routines and I/O helpers of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CcaError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("matrix `{0}` is not symmetric positive-definite")]
    NotPositiveDefinite(&'static str),

    #[error("matrix `{0}` is not symmetric within tolerance")]
    NotSymmetric(&'static str),

    #[error("matrix `{name}` is ill-conditioned (factor diagonal ratio {ratio:.3e} exceeds {limit:.1e})")]
    IllConditioned {
        name: &'static str,
        ratio: f64,
        limit: f64,
    },

    #[error("rank deficiency: column {column} collapsed during G-orthonormalization")]
    RankDeficient { column: usize },

    #[error("point is not feasible: error {error:.3e} exceeds tolerance {tol:.1e}")]
    Infeasible { error: f64, tol: f64 },

    #[error("vector is not tangent: residual {residual:.3e} exceeds tolerance {tol:.1e}")]
    NotTangent { residual: f64, tol: f64 },

    #[error("Sherman-Morrison denominator {0:.3e} is degenerate")]
    DegenerateUpdate(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CcaError {
    fn from(e: std::io::Error) -> Self {
        CcaError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CcaError>;

pub(crate) fn check_dims(
    context: &'static str,
    expected: (usize, usize),
    actual: (usize, usize),
) -> Result<()> {
    if expected != actual {
        return Err(CcaError::DimensionMismatch {
            context,
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        });
    }
    Ok(())
}
