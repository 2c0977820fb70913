use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiracError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("singular matrix (shift lies in the spectrum){}", at_momentum(.momentum))]
    Singular { momentum: Option<Vec<f64>> },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("unsupported model pair: {0}")]
    UnsupportedPair(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

fn at_momentum(m: &Option<Vec<f64>>) -> String {
    match m {
        Some(xi) => format!(" at xi = {xi:?}"),
        None => String::new(),
    }
}

impl From<std::io::Error> for DiracError {
    fn from(e: std::io::Error) -> Self {
        DiracError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DiracError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(DiracError::InvalidArgument(msg.into()))
}
