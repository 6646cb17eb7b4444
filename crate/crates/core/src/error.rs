use thiserror::Error;

/// Errors produced by the border-classification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported model: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("infeasible subsample: {0}")]
    Infeasible(String),

    #[error("no bandwidth satisfies the weight condition: {0}")]
    NoBandwidth(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("root finding failed: {0}")]
    RootFinding(String),

    #[error("border training failed: {0}")]
    Untrainable(String),

    #[error("probability estimates missing: {0}")]
    MissingProbability(String),

    #[error("timer resolution too coarse: {0}")]
    TimerResolution(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
