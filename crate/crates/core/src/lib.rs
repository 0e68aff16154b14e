//! Detector-agnostic building blocks for small-object domain adaptation:
//! normalized annotations and label files, difficulty scoring of labeled
//! targets, adaptive curriculum confidence thresholds, masked copy-paste
//! augmentation with gradient-domain blending, and single-category
//! detection evaluation.
//!
//! Everything here is pure library code with explicit determinism: any
//! operation that consumes randomness takes a seed and derives per-item
//! streams from stable path hashes, so outputs are byte-identical across
//! runs, platforms, and worker counts.

pub mod annotations;
pub mod curriculum;
pub mod difficulty;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod mca;
pub mod util;

pub use error::CoreError;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
