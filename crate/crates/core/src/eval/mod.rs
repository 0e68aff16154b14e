//! Single-category detection evaluation and adaptation gain.

mod ap;
mod gain;

pub use ap::{
    average_precision, map50, ApResult, Detection, IntegrationMode, Map50Report, MatchRecord,
    PerImageEval, PrPoint,
};
pub use gain::{adaptation_gain, AdaptationGainInputs, GainReport};
