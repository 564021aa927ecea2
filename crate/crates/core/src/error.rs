use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {dim} mismatch (expected {expected}, got {actual})")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("loss must be a scalar, got {numel} elements")]
    NonScalarLoss { numel: usize },

    #[error("batch norm {name}: eval mode requires running statistics from at least one training step")]
    UninitializedStats { name: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("modulation: {0}")]
    Modulation(String),

    #[error("non-finite loss at step {step} (lr {lr:e})")]
    NonFiniteLoss { step: usize, lr: f64 },

    #[error("weights file: {0}")]
    Weights(String),

    #[error("pnm: {0}")]
    Pnm(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            message: message.into(),
        }
    }
}
