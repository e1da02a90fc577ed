use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("scaling vector requested before the first adaptive step")]
    ScalingUnavailable,

    #[error("smoother does not support {0}")]
    SmootherUnsupported(String),

    #[error("smoother buffers need {required} p*n entries, budget is {budget}")]
    MemoryBudget { required: usize, budget: usize },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("undefined normalization: {0}")]
    UndefinedNormalization(String),

    #[error("parameter layouts differ")]
    LayoutMismatch,

    #[error("malformed IDX data: {0}")]
    IdxFormat(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("csv: {0}")]
    Csv(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("no checkpoint recorded at step {0}")]
    MissingCheckpoint(usize),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
