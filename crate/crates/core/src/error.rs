use thiserror::Error;

use crate::spectrum::Violation;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("index {index} out of range for {context} (size {size})")]
    IndexOutOfRange {
        context: &'static str,
        index: usize,
        size: usize,
    },

    #[error("energy efficiency undefined: zero energy spent in slot")]
    UndefinedEnergyEfficiency,

    #[error("stationary distribution is not unique (p01 = p10 = 0)")]
    NonUniqueStationary,

    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },

    #[error("training loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("Q-value magnitude {magnitude:e} exceeded divergence guard at step {step}")]
    Diverged { step: u64, magnitude: f64 },

    #[error("state space too large: M = {m} exceeds the limit of {limit} for {context}")]
    TooManyChannels {
        m: usize,
        limit: usize,
        context: &'static str,
    },

    #[error("replay buffer holds {available} experiences, batch needs {requested}")]
    InsufficientSamples { available: usize, requested: usize },

    #[error("assignment violates constraints: {0:?}")]
    ConstraintViolation(Vec<Violation>),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
