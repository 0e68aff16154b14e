//! Staged large-to-small self-training orchestration over an external
//! detector: pseudo-label snapshots between training periods, curriculum
//! correction and copy-paste augmentation of each period's data,
//! resumable checkpointed execution, and deterministic synthetic
//! fixtures with stub adapters for desk-scale end-to-end runs.

pub mod adapter;
pub mod error;
pub mod fixtures;
pub mod paths;
pub mod prepare;
pub mod run;
pub mod stage;
pub mod state;

pub use error::PipelineError;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, PipelineError>;
