use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplatError {
    #[error("invalid rig: {0}")]
    InvalidRig(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("{what}: expected {expected}, got {got}")]
    Count {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("malformed splat dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

pub type Result<T> = std::result::Result<T, SplatError>;
