//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Two tensors had incompatible shapes for an operation.
    #[error("{op}: dimension mismatch, {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A structural or configuration precondition failed.
    #[error("configuration error: {0}")]
    Config(String),

    /// A scalar argument fell outside its valid range.
    #[error("range error: {0}")]
    Range(String),

    /// A non-finite value showed up where the math requires finite ones.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A prompt clause is not part of the fixed vocabulary.
    #[error("vocabulary error: unknown clause `{0}`")]
    Vocabulary(String),

    /// A prompt exceeded the fixed token budget.
    #[error("prompt length error: {got} clauses exceeds the limit of {limit}")]
    PromptLength { got: usize, limit: usize },

    /// An optimizer step found a trainable parameter without a gradient.
    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    /// A frozen parameter accumulated a gradient during distillation.
    #[error("frozenness violation: parameter `{0}` received a gradient")]
    Frozenness(String),

    /// Checkpoint parsing, validation, or compatibility failure.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Dataset file parsing or validation failure.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Analysis precondition failure (grouping gaps, untrained model, ...).
    #[error("analysis error: {0}")]
    Analysis(String),

    /// Training diverged past the abort threshold.
    #[error("divergence: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
