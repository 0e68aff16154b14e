//! Durable run state for kill-and-resume orchestration.
//!
//! State is checkpointed after every completed stage. All stored paths
//! are workdir-relative so a run directory can be moved or compared
//! across hosts without rewriting state.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::stage::{ModelRole, StageId};
use crate::Result;

/// Checkpointed progress of one pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineState {
    pub seed: u64,
    /// Digest of the resolved run configuration. A resume with a
    /// different configuration is refused instead of silently mixing
    /// artifacts from two setups.
    pub config_digest: String,
    /// Stages finished so far, in execution order.
    pub completed: Vec<StageId>,
    /// Workdir-relative model path produced by each completed stage.
    pub models: BTreeMap<StageId, PathBuf>,
}

impl PipelineState {
    pub fn new(seed: u64, config_digest: impl Into<String>) -> Self {
        PipelineState {
            seed,
            config_digest: config_digest.into(),
            completed: Vec::new(),
            models: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Writes the state atomically via a temporary sibling file so a
    /// kill mid-write never leaves a truncated checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| PipelineError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text.as_bytes()).map_err(|e| PipelineError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))?;
        Ok(())
    }

    pub fn is_complete(&self, stage: StageId) -> bool {
        self.completed.contains(&stage)
    }

    /// Records a finished stage. Completion order is enforced: each
    /// adaptation period requires its predecessor so resumed runs
    /// cannot skip ahead of the schedule.
    pub fn mark_complete(&mut self, stage: StageId, model: PathBuf) -> Result<()> {
        if self.is_complete(stage) {
            return Err(PipelineError::State {
                message: format!("stage {stage} is already complete"),
            });
        }
        let prerequisite = match stage {
            StageId::S1Large => None,
            StageId::S1Small => Some(StageId::S1Large),
            StageId::S21 => Some(StageId::S1Large),
            StageId::S22 => Some(StageId::S21),
            StageId::S3 => Some(StageId::S22),
        };
        if let Some(required) = prerequisite {
            if !self.is_complete(required) {
                return Err(PipelineError::State {
                    message: format!("stage {stage} cannot complete before {required}"),
                });
            }
        }
        self.completed.push(stage);
        self.models.insert(stage, model);
        Ok(())
    }

    /// Most recent completed model for a role, in completion order.
    pub fn latest_model(&self, role: ModelRole) -> Option<&PathBuf> {
        self.completed
            .iter()
            .rev()
            .find(|s| s.role() == role)
            .and_then(|s| self.models.get(s))
    }

    /// Refuses to resume against a different configuration or seed.
    pub fn check_resume(&self, seed: u64, config_digest: &str) -> Result<()> {
        if self.seed != seed {
            return Err(PipelineError::State {
                message: format!(
                    "state was written with seed {} but the run requests seed {seed}",
                    self.seed
                ),
            });
        }
        if self.config_digest != config_digest {
            return Err(PipelineError::State {
                message: format!(
                    "state digest {} does not match the current configuration digest {config_digest}",
                    self.config_digest
                ),
            });
        }
        Ok(())
    }

    /// Verifies every recorded model file still exists under the
    /// workdir before a resume trusts the checkpoint.
    pub fn validate_artifacts(&self, workdir: &Path) -> Result<()> {
        for stage in &self.completed {
            let rel = self.models.get(stage).ok_or_else(|| PipelineError::State {
                message: format!("stage {stage} is marked complete but has no recorded model"),
            })?;
            let full = workdir.join(rel);
            if !full.is_file() {
                return Err(PipelineError::State {
                    message: format!(
                        "model for completed stage {stage} is missing: {}",
                        full.display()
                    ),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn stages_cannot_complete_out_of_order() {
        let mut state = PipelineState::new(7, "abc");
        let err = state.mark_complete(StageId::S21, PathBuf::from("m.json"));
        assert!(err.is_err());
        state
            .mark_complete(StageId::S1Large, PathBuf::from("a.json"))
            .unwrap();
        state
            .mark_complete(StageId::S21, PathBuf::from("b.json"))
            .unwrap();
        assert!(state.mark_complete(StageId::S3, PathBuf::from("c.json")).is_err());
        state
            .mark_complete(StageId::S22, PathBuf::from("d.json"))
            .unwrap();
        assert!(state.mark_complete(StageId::S3, PathBuf::from("e.json")).is_ok());
    }

    #[test]
    fn completing_a_stage_twice_is_refused() {
        let mut state = PipelineState::new(7, "abc");
        state
            .mark_complete(StageId::S1Large, PathBuf::from("a.json"))
            .unwrap();
        assert!(state
            .mark_complete(StageId::S1Large, PathBuf::from("a.json"))
            .is_err());
    }

    #[test]
    fn latest_model_tracks_each_role() {
        let mut state = PipelineState::new(7, "abc");
        state
            .mark_complete(StageId::S1Large, PathBuf::from("l1.json"))
            .unwrap();
        state
            .mark_complete(StageId::S1Small, PathBuf::from("s1.json"))
            .unwrap();
        state
            .mark_complete(StageId::S21, PathBuf::from("l2.json"))
            .unwrap();
        assert_eq!(
            state.latest_model(ModelRole::Large),
            Some(&PathBuf::from("l2.json"))
        );
        assert_eq!(
            state.latest_model(ModelRole::Small),
            Some(&PathBuf::from("s1.json"))
        );
    }

    #[test]
    fn state_round_trips_through_disk() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("state.json");
        let mut state = PipelineState::new(42, "digest");
        state
            .mark_complete(StageId::S1Large, PathBuf::from("stages/s1-large/model.json"))
            .unwrap();
        state.save(&path).unwrap();
        let back = PipelineState::load(&path).unwrap();
        assert_eq!(back.seed, 42);
        assert_eq!(back.completed, vec![StageId::S1Large]);
        assert_eq!(
            back.models.get(&StageId::S1Large),
            Some(&PathBuf::from("stages/s1-large/model.json"))
        );
    }

    #[test]
    fn resume_rejects_a_changed_configuration() {
        let state = PipelineState::new(42, "digest");
        assert!(state.check_resume(42, "digest").is_ok());
        assert!(state.check_resume(43, "digest").is_err());
        assert!(state.check_resume(42, "other").is_err());
    }

    #[test]
    fn missing_artifacts_invalidate_the_checkpoint() {
        let dir = tempdir().unwrap();
        let mut state = PipelineState::new(1, "d");
        state
            .mark_complete(StageId::S1Large, PathBuf::from("model.json"))
            .unwrap();
        assert!(state.validate_artifacts(dir.path()).is_err());
        std::fs::write(dir.path().join("model.json"), b"{}").unwrap();
        assert!(state.validate_artifacts(dir.path()).is_ok());
    }
}
