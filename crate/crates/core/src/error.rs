//! Error type shared by every module in this crate.

use std::path::PathBuf;
use thiserror::Error;

/// All failure modes surfaced by the core library.
///
/// Parse and validation errors always carry enough context (path, line)
/// to point at the offending input without re-running anything.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("file not found: {path}")]
    FileNotFound { path: PathBuf },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: label parse error: {message}")]
    LabelParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid bounding box: {message}")]
    InvalidBox { message: String },

    #[error("invalid image {path}: {message}")]
    InvalidImage { path: PathBuf, message: String },

    #[error("mask error: {message}")]
    InvalidMask { message: String },

    #[error("manifest error in {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("json error on {path}: {message}")]
    Json { path: PathBuf, message: String },

    #[error("degenerate box: {message}")]
    DegenerateBox { message: String },

    #[error("invalid parameter: {message}")]
    InvalidParameter { message: String },

    #[error("placement error: {message}")]
    Placement { message: String },

    #[error(
        "iterative solve did not converge: relative residual {residual:.3e} > tolerance {tolerance:.3e} after {iterations} iterations"
    )]
    Convergence {
        residual: f64,
        tolerance: f64,
        iterations: usize,
    },

    #[error("crop library error: {message}")]
    CropLibrary { message: String },

    #[error("evaluation input error: {message}")]
    EvalInput { message: String },

    #[error("arithmetic error: {message}")]
    Arithmetic { message: String },
}

impl CoreError {
    /// Wraps an i/o error with the path it occurred on, mapping the
    /// not-found kind to the dedicated variant.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            CoreError::FileNotFound { path }
        } else {
            CoreError::Io { path, source }
        }
    }
}
