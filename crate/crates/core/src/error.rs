use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for an operation. Carries the axis-level
    /// detail so callers can see exactly which dimension disagreed.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An operation received an argument outside its domain (bad axis, zero
    /// kernel, negative count, ...).
    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    /// `backward` was requested on a tensor that is not a scalar.
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// Checkpoint container could not be parsed or failed validation.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Config file rejected.
    #[error("config: {0}")]
    Config(String),

    /// Inflation plan file rejected or plan invariants violated.
    #[error("plan: {0}")]
    Plan(String),

    /// Parameter name/shape sets disagree between a model and a checkpoint.
    #[error("parameter mismatch:\n{0}")]
    ParamMismatch(String),

    /// Training aborted (non-finite loss, degenerate data, ...).
    #[error("training: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument { op, detail: detail.into() }
    }
}
