//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by any subsystem of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shape or dimension mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// A softmax row had every entry masked out.
    #[error("empty attention support")]
    EmptyAttentionSupport,

    /// Invalid model, stage, or generator configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A gradient contained NaN or Inf.
    #[error("non-finite gradient for parameter '{param}'")]
    NonFiniteGrad { param: String },

    /// The training loss became NaN or Inf.
    #[error("non-finite loss at iteration {iteration}{}", checkpoint.as_ref().map(|p| format!("; last finite state saved to {p}")).unwrap_or_default())]
    NonFiniteLoss {
        iteration: u64,
        checkpoint: Option<String>,
    },

    /// Unknown token or vocabulary mismatch.
    #[error("vocabulary error: {0}")]
    Vocab(String),

    /// Structured parse failure with a byte position into the input.
    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    /// Checkpoint file is corrupt, truncated, or of an unsupported version.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Dataset or record-file problem.
    #[error("data error: {0}")]
    Data(String),

    /// Evaluation precondition violated.
    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn parse(position: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            position,
            message: msg.into(),
        }
    }
}
