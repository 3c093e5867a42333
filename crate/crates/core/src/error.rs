use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HiclError>;

#[derive(Debug, Error)]
pub enum HiclError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by `{op}` at node {node}")]
    NonFinite { op: &'static str, node: usize },

    #[error("zero-norm row {row} in {context}")]
    ZeroNorm { context: &'static str, row: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-deterministic function: two identical evaluations returned {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl HiclError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        HiclError::Invalid(msg.into())
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        HiclError::Shape { op, detail: detail.into() }
    }

    /// True for failures caused by non-finite arithmetic rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            HiclError::NonFinite { .. } | HiclError::ZeroNorm { .. } | HiclError::NonDeterministic { .. }
        )
    }
}
