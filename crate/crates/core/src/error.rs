use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative solver stopped without meeting its tolerance.
    #[error("solver did not converge after {iterations} iterations (residual {residual:e}): {context}")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        context: String,
    },

    /// A design or bread matrix is rank deficient.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// No observations survive the bandwidth / sample-window filter.
    #[error("empty estimation window: {0}")]
    EmptyWindow(String),

    /// Too few observations for the requested computation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Two inputs that must agree do not.
    #[error("mismatch: {0}")]
    Mismatch(String),

    /// Missing column or malformed table.
    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
