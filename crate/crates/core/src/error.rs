use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Numerics(#[from] glca_numerics::NumericsError),

    #[error(transparent)]
    Splat(#[from] glca_splat::SplatError),

    #[error("{what}: expected width {expected}, got {got}")]
    Width {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("unknown label: {0}")]
    UnknownLabel(String),

    #[error("non-finite state at sampling step {step}")]
    NonFinite { step: usize },

    #[error("non-finite loss at training step {step}")]
    Diverged { step: u64 },
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CoreError {
    CoreError::Invalid(msg.into())
}
