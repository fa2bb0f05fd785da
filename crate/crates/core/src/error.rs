use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("kernel `{kernel}` failed: {reason}")]
    KernelFailed { kernel: String, reason: String },

    #[error("no candidate passed verification for {0}")]
    NoWinner(String),

    #[error("empty corpus: no tuning records to analyze")]
    EmptyCorpus,

    #[error("malformed store {path}:{line}: {reason}")]
    MalformedStore {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("schema mismatch: expected version {expected}, found {found}")]
    SchemaMismatch { expected: u32, found: u32 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
