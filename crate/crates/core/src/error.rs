use thiserror::Error;

pub type Result<T> = std::result::Result<T, UsesError>;

#[derive(Debug, Error)]
pub enum UsesError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("degenerate shape: {0}")]
    DegenerateShape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// A NaN or infinity was produced; `node` identifies the tape node (or
    /// parameter) where it was detected.
    #[error("non-finite value in {node} ({op}): {detail}")]
    NonFinite {
        node: String,
        op: String,
        detail: String,
    },

    #[error("unsupported FFT length {len}: factor {factor} is neither 2 nor 3")]
    FftLength { len: usize, factor: usize },

    #[error("unsupported sample rate {rate} Hz: {hint}")]
    UnsupportedRate { rate: u32, hint: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("undefined reference: {0}")]
    UndefinedReference(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("wav error: {0}")]
    Wav(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Io,
    Numeric,
}

impl UsesError {
    pub fn class(&self) -> ErrorClass {
        match self {
            UsesError::NonFinite { .. } => ErrorClass::Numeric,
            UsesError::Io(_) | UsesError::Wav(_) | UsesError::Checkpoint(_) => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }
}

impl From<hound::Error> for UsesError {
    fn from(err: hound::Error) -> Self {
        match err {
            hound::Error::IoError(io) => UsesError::Io(io),
            other => UsesError::Wav(other.to_string()),
        }
    }
}
