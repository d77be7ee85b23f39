use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not Hermitian (max |M - M^dag| = {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },

    #[error("matrix is not positive definite (pivot {index} = {pivot:.3e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("not a quantum channel: {0}")]
    NotChannel(String),

    #[error("invalid density operator: {0}")]
    InvalidState(String),

    #[error("invalid code space: {0}")]
    InvalidCode(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("equality constraints are inconsistent (least-squares residual {residual:.3e})")]
    InconsistentEqualities { residual: f64 },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
