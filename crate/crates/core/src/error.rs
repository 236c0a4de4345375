use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or arguments that do not fit together.
    #[error("usage error: {0}")]
    Usage(String),

    /// NaN/Inf produced by a forward op or a singular linear system.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The dual QP did not reach the requested tolerance.
    #[error("solver did not converge after {iterations} iterations (gap {gap:.3e})")]
    Solver {
        iterations: usize,
        gap: f64,
        last_alpha: Vec<f64>,
    },

    /// Malformed IDX/NPY/checkpoint/JSON artifact.
    #[error("format error: {0}")]
    Format(String),

    /// Dataset contents that violate the experiment protocol.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for failures caused by arithmetic rather than inputs (CLI exit code 3).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Solver { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
