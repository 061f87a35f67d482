use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("group size {size} outside 1..={capacity}")]
    InvalidSize { size: usize, capacity: usize },

    #[error("size class {size} has no finite element count (capacity {capacity})")]
    UnboundedClass { size: usize, capacity: usize },

    #[error("{0}")]
    InvalidFunction(String),

    #[error("window {window} must be smaller than train length {train_len}")]
    WindowExceedsTrainLength { window: usize, train_len: usize },

    #[error("key position {key} is after query position {query}")]
    CausalityViolation { query: usize, key: usize },

    #[error("position {position} out of range for sequence length {len}")]
    OutOfRange { position: usize, len: usize },

    #[error("expected dimension {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("{0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("token id {id} outside vocabulary of size {vocab}")]
    OutOfVocabulary { id: usize, vocab: usize },

    #[error("{0}")]
    InvalidConfig(String),

    #[error("malformed weights file: {0}")]
    WeightsFormat(String),

    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable kebab-case tag, printed by the CLI in front of the message.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidSize { .. } => "invalid-size",
            Error::UnboundedClass { .. } => "unbounded-class",
            Error::InvalidFunction(_) => "invalid-function",
            Error::WindowExceedsTrainLength { .. } => "window-exceeds-train-length",
            Error::CausalityViolation { .. } => "causality-violation",
            Error::OutOfRange { .. } => "out-of-range",
            Error::Dimension { .. } => "dimension",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "invalid-input",
            Error::OutOfVocabulary { .. } => "out-of-vocabulary",
            Error::InvalidConfig(_) => "invalid-config",
            Error::WeightsFormat(_) => "weights-format",
            Error::Usage(_) => "usage",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
