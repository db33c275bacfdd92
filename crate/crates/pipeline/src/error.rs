use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{0} already exists; pass --force to overwrite")]
    Exists(PathBuf),

    #[error("missing {what} at {path}; run `glca {stage}` first")]
    MissingStage {
        stage: &'static str,
        what: &'static str,
        path: PathBuf,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] glca_core::CoreError),

    #[error(transparent)]
    Numerics(#[from] glca_numerics::NumericsError),

    #[error(transparent)]
    Splat(#[from] glca_splat::SplatError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}

pub(crate) fn format_err(path: impl Into<PathBuf>, msg: impl Into<String>) -> PipelineError {
    PipelineError::Format {
        path: path.into(),
        msg: msg.into(),
    }
}
