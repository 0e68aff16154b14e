//! Stage identities and per-stage training directives.
//!
//! The pipeline runs a fixed sequence of training periods: both models
//! are first adapted from source-domain data, then the large model is
//! refined on the target domain in two periods (normalization layers
//! only, then every layer), and finally the small model is trained on
//! the labels produced by the last large model. Pseudo labels are
//! refreshed once at the start of each target-domain period and never
//! mid-period.

use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::Result;

/// One training period in the fixed schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StageId {
    #[serde(rename = "s1-large")]
    S1Large,
    #[serde(rename = "s1-small")]
    S1Small,
    #[serde(rename = "s2.1")]
    S21,
    #[serde(rename = "s2.2")]
    S22,
    #[serde(rename = "s3")]
    S3,
}

impl StageId {
    /// Directory and report name for the stage.
    pub fn dir_name(self) -> &'static str {
        match self {
            StageId::S1Large => "s1-large",
            StageId::S1Small => "s1-small",
            StageId::S21 => "s2.1",
            StageId::S22 => "s2.2",
            StageId::S3 => "s3",
        }
    }

    /// Full schedule in execution order.
    pub fn sequence(train_s1_small: bool) -> Vec<StageId> {
        let mut order = vec![StageId::S1Large];
        if train_s1_small {
            order.push(StageId::S1Small);
        }
        order.extend([StageId::S21, StageId::S22, StageId::S3]);
        order
    }

    /// Whether a fresh pseudo-label snapshot is produced when the
    /// stage begins. True for exactly the three target-domain periods.
    pub fn regenerates_pseudo(self) -> bool {
        matches!(self, StageId::S21 | StageId::S22 | StageId::S3)
    }

    pub fn role(self) -> ModelRole {
        match self {
            StageId::S1Large | StageId::S21 | StageId::S22 => ModelRole::Large,
            StageId::S1Small | StageId::S3 => ModelRole::Small,
        }
    }
}

impl std::fmt::Display for StageId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl std::str::FromStr for StageId {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s1-large" => Ok(StageId::S1Large),
            "s1-small" => Ok(StageId::S1Small),
            "s2.1" => Ok(StageId::S21),
            "s2.2" => Ok(StageId::S22),
            "s3" => Ok(StageId::S3),
            other => Err(PipelineError::Config {
                message: format!(
                    "unknown stage {other}; expected s1-large, s1-small, s2.1, s2.2, or s3"
                ),
            }),
        }
    }
}

/// Which of the two detectors a stage trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelRole {
    Large,
    Small,
}

/// Layer-freezing directive forwarded to the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreezeDirective {
    #[serde(rename = "except-norm")]
    ExceptNorm,
    #[serde(rename = "none")]
    Unfrozen,
}

impl FreezeDirective {
    /// String contract used in trainer request files.
    pub fn request_value(self) -> &'static str {
        match self {
            FreezeDirective::ExceptNorm => "except-norm",
            FreezeDirective::Unfrozen => "none",
        }
    }
}

/// Weights on the unlabeled and pasted loss terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(PipelineError::Config {
                    message: format!("loss weight {name} must be finite and non-negative, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Combines the supervised, unlabeled, and pasted loss terms into the
/// total used for reporting. The total is linear in each term.
pub fn compose_loss(l_s: f64, l_u: f64, l_t: f64, weights: &LossWeights) -> Result<f64> {
    let total = l_s + weights.alpha * l_u + weights.beta * l_t;
    if !total.is_finite() {
        return Err(PipelineError::Arithmetic {
            message: format!("loss total is not finite (l_s={l_s}, l_u={l_u}, l_t={l_t})"),
        });
    }
    Ok(total)
}

/// Shared tuning knobs applied to every stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainTuning {
    pub epochs: u32,
    pub weights: LossWeights,
    pub lr_adaptive: f64,
    pub lr_source: f64,
}

impl Default for TrainTuning {
    fn default() -> Self {
        TrainTuning {
            epochs: 30,
            weights: LossWeights::default(),
            lr_adaptive: 0.002,
            lr_source: 0.01,
        }
    }
}

impl TrainTuning {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(PipelineError::Config {
                message: "epochs must be at least 1".into(),
            });
        }
        for (name, v) in [
            ("lr_adaptive", self.lr_adaptive),
            ("lr_source", self.lr_source),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(PipelineError::Config {
                    message: format!("{name} must be finite and positive, got {v}"),
                });
            }
        }
        self.weights.validate()
    }
}

/// Fully resolved directives for one training period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageConfig {
    pub id: StageId,
    pub role: ModelRole,
    pub freeze: FreezeDirective,
    pub lr: f64,
    pub epochs: u32,
    pub weights: LossWeights,
    /// True when the stage consumes target-domain pseudo labels.
    pub adaptive: bool,
}

impl StageConfig {
    /// Resolves the fixed per-stage directives: the first periods
    /// train every layer on source data at the source rate, the two
    /// normalization-sensitive periods freeze all but normalization
    /// layers, and the middle large-model period trains unfrozen.
    pub fn for_stage(id: StageId, tuning: &TrainTuning) -> StageConfig {
        let (freeze, adaptive) = match id {
            StageId::S1Large | StageId::S1Small => (FreezeDirective::Unfrozen, false),
            StageId::S21 => (FreezeDirective::ExceptNorm, true),
            StageId::S22 => (FreezeDirective::Unfrozen, true),
            StageId::S3 => (FreezeDirective::ExceptNorm, true),
        };
        let lr = if adaptive {
            tuning.lr_adaptive
        } else {
            tuning.lr_source
        };
        StageConfig {
            id,
            role: id.role(),
            freeze,
            lr,
            epochs: tuning.epochs,
            weights: tuning.weights,
            adaptive,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_ids_round_trip_through_serde() {
        for id in [
            StageId::S1Large,
            StageId::S1Small,
            StageId::S21,
            StageId::S22,
            StageId::S3,
        ] {
            let text = serde_json::to_string(&id).unwrap();
            let back: StageId = serde_json::from_str(&text).unwrap();
            assert_eq!(back, id);
        }
        assert_eq!(serde_json::to_string(&StageId::S21).unwrap(), "\"s2.1\"");
    }

    #[test]
    fn sequence_orders_the_periods() {
        assert_eq!(
            StageId::sequence(false),
            vec![StageId::S1Large, StageId::S21, StageId::S22, StageId::S3]
        );
        assert_eq!(
            StageId::sequence(true),
            vec![
                StageId::S1Large,
                StageId::S1Small,
                StageId::S21,
                StageId::S22,
                StageId::S3
            ]
        );
    }

    #[test]
    fn pseudo_labels_refresh_exactly_three_times() {
        let refreshes = StageId::sequence(true)
            .into_iter()
            .filter(|s| s.regenerates_pseudo())
            .count();
        assert_eq!(refreshes, 3);
    }

    #[test]
    fn adaptation_stages_freeze_as_directed() {
        let tuning = TrainTuning::default();
        let s21 = StageConfig::for_stage(StageId::S21, &tuning);
        assert_eq!(s21.freeze, FreezeDirective::ExceptNorm);
        assert_eq!(s21.role, ModelRole::Large);
        let s22 = StageConfig::for_stage(StageId::S22, &tuning);
        assert_eq!(s22.freeze, FreezeDirective::Unfrozen);
        assert_eq!(s22.role, ModelRole::Large);
        let s3 = StageConfig::for_stage(StageId::S3, &tuning);
        assert_eq!(s3.freeze, FreezeDirective::ExceptNorm);
        assert_eq!(s3.role, ModelRole::Small);
    }

    #[test]
    fn learning_rate_tracks_the_stage_kind() {
        let tuning = TrainTuning::default();
        let s1 = StageConfig::for_stage(StageId::S1Large, &tuning);
        assert_eq!(s1.lr, 0.01);
        assert!(!s1.adaptive);
        let s21 = StageConfig::for_stage(StageId::S21, &tuning);
        assert_eq!(s21.lr, 0.002);
        assert!(s21.adaptive);
    }

    #[test]
    fn loss_total_follows_the_weighted_sum() {
        let w = LossWeights::default();
        assert_eq!(compose_loss(1.0, 1.0, 1.0, &w).unwrap(), 3.0);
        let zero = LossWeights {
            alpha: 0.0,
            beta: 0.0,
        };
        assert_eq!(compose_loss(0.7, 9.0, 9.0, &zero).unwrap(), 0.7);
        let custom = LossWeights {
            alpha: 0.5,
            beta: 2.0,
        };
        let total = compose_loss(0.5, 0.2, 0.1, &custom).unwrap();
        assert!((total - 0.8).abs() < 1e-12);
    }

    #[test]
    fn loss_total_is_linear_in_each_term() {
        let w = LossWeights {
            alpha: 0.3,
            beta: 1.7,
        };
        let base = compose_loss(0.4, 0.6, 0.2, &w).unwrap();
        let bumped = compose_loss(0.4, 0.6 + 1.0, 0.2, &w).unwrap();
        assert!((bumped - base - w.alpha).abs() < 1e-12);
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let w = LossWeights::default();
        assert!(compose_loss(f64::INFINITY, 0.0, 0.0, &w).is_err());
        assert!(compose_loss(0.0, f64::NAN, 0.0, &w).is_err());
    }

    #[test]
    fn tuning_rejects_zero_epochs() {
        let tuning = TrainTuning {
            epochs: 0,
            ..TrainTuning::default()
        };
        assert!(tuning.validate().is_err());
        assert!(TrainTuning::default().validate().is_ok());
    }

    #[test]
    fn freeze_directive_matches_the_request_contract() {
        assert_eq!(FreezeDirective::ExceptNorm.request_value(), "except-norm");
        assert_eq!(FreezeDirective::Unfrozen.request_value(), "none");
    }
}
