use thiserror::Error;

/// Errors surfaced by any stage of the lab pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range in {op}: index {index} >= {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("backward pass requires a tracked scalar loss: {0}")]
    NotDifferentiable(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("unknown word `{0}` (closed vocabulary)")]
    UnknownWord(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("malformed record at line {line}: {detail}")]
    MalformedLine { line: usize, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing file: {0}")]
    MissingFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
