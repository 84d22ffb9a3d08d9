use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    Numeric { op: &'static str },

    #[error("invalid graph state: {0}")]
    State(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("injection error: {0}")]
    Injection(String),

    #[error("vocabulary conflict: {0}")]
    Conflict(String),

    #[error("input of {len} tokens exceeds max_len {max}")]
    Length { len: usize, max: usize },

    #[error("training diverged at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
