use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("unknown token: {0}")]
    UnknownToken(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty continuation")]
    EmptyContinuation,
    #[error("feature dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("degenerate labels: training data needs both classes")]
    DegenerateLabels,
    #[error("empty score list")]
    EmptyScores,
    #[error("unsupported format version {0}")]
    FormatVersion(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
