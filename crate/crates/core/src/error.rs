use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MsdeError {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("operator: {0}")]
    InvalidOperator(String),

    #[error("point {point:?} is outside the operator domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("pin strength too weak for the pinned moment bound: C(m) = {c_m} <= 0")]
    PinTooWeak { c_m: f64 },

    #[error("Chebyshev bound {bound} >= 1: increase m or T")]
    ChebyshevBoundTooLarge { bound: f64 },

    #[error("target {0:?} is not an interior point of the domain")]
    NotInterior(Vec<f64>),

    #[error("grid mismatch between empirical measures")]
    GridMismatch,

    #[error("grid too small: {fraction:.4} of the mass fell outside the grid")]
    GridTooSmall { fraction: f64 },

    #[error("missing Girsanov accumulators in coupling run")]
    MissingAccumulators,
}

pub type Result<T> = std::result::Result<T, MsdeError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> MsdeError {
    MsdeError::InvalidParameter { name, reason: reason.into() }
}
