use thiserror::Error;

/// Errors raised by the estimation engine and its file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The observation model is not differentiable (or not defined) at the
    /// requested point, e.g. coincident atoms or collinear bond vectors.
    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    /// The innovation variance `H C Hᵀ + v` was not positive, or a covariance
    /// block has a clearly negative eigenvalue. Both mean the covariance has
    /// lost positive semidefiniteness.
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("generation failed: {0}")]
    GenerationFailed(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
