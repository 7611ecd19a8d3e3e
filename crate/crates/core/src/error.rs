use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrouseError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The matrix handed to an orthonormalization is numerically rank deficient.
    #[error("matrix is numerically rank deficient (|r_jj| = {pivot:e} in column {column})")]
    NumericalRank { column: usize, pivot: f64 },

    /// ‖p‖ is too small for the step angle to be defined.
    #[error("projection norm {0:e} is below the degeneracy tolerance")]
    DegenerateProjection(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, GrouseError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(GrouseError::InvalidArgument(msg.into()))
}
