use thiserror::Error;

use crate::expr::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("domain error in `{expr}`: {op} undefined at {arg}")]
    Domain {
        expr: String,
        op: &'static str,
        arg: f64,
    },

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("point is not critical: residual norm {residual:e} exceeds tolerance {tol:e}")]
    NotCritical { residual: f64, tol: f64 },

    #[error("covector is not in the vertical polar: fiber part has norm {norm:e}")]
    NotInVerticalPolar { norm: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown catalog entry `{0}`")]
    UnknownCatalog(String),

    #[error("base point lies in the excluded region: {0}")]
    ExcludedRegion(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("projection onto the critical set did not converge (residual {residual:e})")]
    ProjectionFailed { residual: f64 },
}

/// Failure of a primitive on an argument outside its domain. Carries no
/// context; callers attach the offending sub-expression.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("{op} undefined at {arg}")]
pub struct DomainError {
    pub op: &'static str,
    pub arg: f64,
}

impl DomainError {
    pub fn with_context(self, expr: impl Into<String>) -> Error {
        Error::Domain {
            expr: expr.into(),
            op: self.op,
            arg: self.arg,
        }
    }
}
