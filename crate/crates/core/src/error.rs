use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Tensor;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// A tape was asked to reference a node it does not hold.
    #[error("tape structure: {0}")]
    Structural(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("did not converge after {iterations} iterations (last step norm {last_step:e})")]
    NoConvergence {
        iterations: usize,
        last_step: f64,
        last_iterate: Tensor,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
