//! Error type for orchestration, adapters, and fixtures.

use std::path::PathBuf;
use thiserror::Error;

/// All failure modes surfaced by the pipeline crate.
///
/// Adapter errors carry the invocation context and captured process
/// output so a failed stage can be diagnosed from the error alone.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] nsn_core::CoreError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {message}")]
    Json { path: PathBuf, message: String },

    #[error("adapter failure ({context}): {message}")]
    Adapter { context: String, message: String },

    #[error("pipeline state error: {message}")]
    State { message: String },

    #[error("configuration error: {message}")]
    Config { message: String },

    #[error("arithmetic error: {message}")]
    Arithmetic { message: String },
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.into(),
            source,
        }
    }
}
