//! Deterministic synthetic datasets and stub adapters.
//!
//! These fixtures let the full pipeline run end to end with no neural
//! detector attached: scenes with exactly known object extents stand in
//! for real footage, and the stub adapter plays both detector and
//! trainer over the documented request protocol.

pub mod scene;
pub mod stub;

pub use scene::{generate_domain, BackgroundStyle, SceneSpec, TargetShape};
pub use stub::{DetectCorruption, LearnSpec, StubModel};
