//! The staged self-training orchestrator.
//!
//! Runs the fixed period schedule against external detector and
//! trainer commands: source training for the large (and optionally
//! small) model, two large-model adaptation periods, then small-model
//! adaptation from the small source model. Before each adaptation
//! period the latest large model writes a fresh pseudo-label snapshot;
//! data is prepared once per period and never mid-period. Progress is
//! checkpointed after every period so a killed run resumes where it
//! stopped and, because every random stream is keyed by seed and
//! period, finishes with byte-identical artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nsn_core::annotations::DatasetManifest;
use nsn_core::curriculum::CurriculumBounds;
use nsn_core::difficulty::DifficultyThresholds;
use nsn_core::eval::{map50, IntegrationMode, Map50Report};
use nsn_core::mca::AugmentConfig;
use nsn_core::util::fnv1a64;

use crate::adapter::{
    generate_pseudo_labels, run_inference, run_training, CommandSpec, TrainRequest,
};
use crate::error::PipelineError;
use crate::paths::{display_slash, relative_path};
use crate::prepare::{
    prepare_adaptive_stage, prepare_source_stage, AdaptiveStageInputs, PrepareReport, StageData,
};
use crate::stage::{ModelRole, StageConfig, StageId, TrainTuning};
use crate::state::PipelineState;
use crate::Result;

/// Full description of a pipeline run.
///
/// Relative paths resolve against the working directory, so a config
/// file can be shared between runs in different locations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub source_manifest: PathBuf,
    pub target_manifest: PathBuf,
    /// When present, every period's fresh model is scored on this set.
    #[serde(default)]
    pub val_manifest: Option<PathBuf>,
    pub detector: CommandSpec,
    pub trainer: CommandSpec,
    /// Pretrained large model the schedule starts from.
    pub large_init: PathBuf,
    /// Pretrained small model; required when `train_s1_small` is set.
    #[serde(default)]
    pub small_init: Option<PathBuf>,
    /// Source-trained small model; required when `train_s1_small` is
    /// unset, ignored otherwise.
    #[serde(default)]
    pub small_source: Option<PathBuf>,
    /// Train the small source model as part of this run instead of
    /// taking it pretrained.
    #[serde(default)]
    pub train_s1_small: bool,
    #[serde(default)]
    pub tuning: TrainTuning,
    #[serde(default)]
    pub bounds: CurriculumBounds,
    #[serde(default)]
    pub difficulty: DifficultyThresholds,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub external_masks: Option<PathBuf>,
    #[serde(default = "default_eval_mode")]
    pub eval_mode: IntegrationMode,
}

fn default_eval_mode() -> IntegrationMode {
    IntegrationMode::AllPoint
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.tuning.validate()?;
        self.bounds.validate()?;
        self.difficulty.validate()?;
        self.augment.validate()?;
        if self.train_s1_small && self.small_init.is_none() {
            return Err(PipelineError::Config {
                message: "train_s1_small requires small_init".into(),
            });
        }
        if !self.train_s1_small && self.small_source.is_none() {
            return Err(PipelineError::Config {
                message: "small_source is required unless train_s1_small is set".into(),
            });
        }
        Ok(())
    }

    /// Stable digest of the configuration exactly as given, used to
    /// refuse resuming a workdir with different settings.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }
}

/// Report written for every completed period.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: StageId,
    pub config: StageConfig,
    pub seed: u64,
    /// Workdir-relative paths.
    pub base_model: String,
    pub model: String,
    pub prepare: PrepareReport,
    #[serde(default)]
    pub eval: Option<Map50Report>,
}

/// Final summary of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub completed: Vec<StageId>,
    pub large_model: Option<String>,
    pub small_model: Option<String>,
    pub stopped_early: bool,
}

fn resolve(workdir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        workdir.join(p)
    }
}

fn stage_seed(config_seed: u64, stage: StageId) -> u64 {
    config_seed ^ fnv1a64(stage.dir_name().as_bytes())
}

struct RunContext<'a> {
    workdir: &'a Path,
    config: &'a RunConfig,
    source_manifest: PathBuf,
    target_manifest: PathBuf,
    val_manifest: Option<PathBuf>,
}

impl RunContext<'_> {
    fn stage_dir(&self, stage: StageId) -> PathBuf {
        self.workdir.join("stages").join(stage.dir_name())
    }

    fn request_path(&self, stage: StageId, verb: &str) -> PathBuf {
        self.workdir
            .join("requests")
            .join(format!("{}-{verb}.json", stage.dir_name()))
    }

    fn rel(&self, p: &Path) -> String {
        display_slash(&relative_path(self.workdir, p))
    }
}

fn run_stage(
    ctx: &RunContext,
    state: &PipelineState,
    stage: StageId,
) -> Result<(PathBuf, StageReport)> {
    let config = ctx.config;
    let stage_dir = ctx.stage_dir(stage);
    fs::create_dir_all(&stage_dir).map_err(|e| PipelineError::io(&stage_dir, e))?;
    let seed = stage_seed(config.seed, stage);
    let stage_config = StageConfig::for_stage(stage, &config.tuning);
    log::info!("stage {stage}: preparing data");

    let data: StageData = if stage_config.adaptive {
        let pseudo_model_rel =
            state
                .latest_model(ModelRole::Large)
                .ok_or_else(|| PipelineError::State {
                    message: format!("stage {stage} needs a completed large model"),
                })?;
        let pseudo_model = ctx.workdir.join(pseudo_model_rel);
        let target = DatasetManifest::load(&ctx.target_manifest)?;
        let pseudo_dir = stage_dir.join("pseudo");
        generate_pseudo_labels(
            &config.detector,
            &pseudo_model,
            &target,
            &ctx.target_manifest,
            &pseudo_dir,
            &ctx.request_path(stage, "infer"),
            &format!("stage {stage} pseudo labels"),
        )?;
        let mut augment = config.augment.clone();
        augment.seed = seed;
        prepare_adaptive_stage(&AdaptiveStageInputs {
            stage_dir: &stage_dir,
            pseudo_dir: &pseudo_dir,
            source_manifest: &ctx.source_manifest,
            target_manifest: &ctx.target_manifest,
            bounds: config.bounds,
            difficulty: config.difficulty,
            augment,
            external_masks: config
                .external_masks
                .as_ref()
                .map(|p| resolve(ctx.workdir, p)),
        })?
    } else {
        prepare_source_stage(&stage_dir, &ctx.source_manifest)?
    };

    let base_model = match stage {
        StageId::S1Large => resolve(ctx.workdir, &config.large_init),
        StageId::S1Small => resolve(
            ctx.workdir,
            config.small_init.as_ref().expect("validated small_init"),
        ),
        StageId::S21 | StageId::S22 => {
            let rel = state
                .latest_model(ModelRole::Large)
                .ok_or_else(|| PipelineError::State {
                    message: format!("stage {stage} needs a completed large model"),
                })?;
            ctx.workdir.join(rel)
        }
        StageId::S3 => {
            // The small model adapts from its source-trained weights,
            // not from any intermediate adapted model.
            if config.train_s1_small {
                let rel = state
                    .models
                    .get(&StageId::S1Small)
                    .ok_or_else(|| PipelineError::State {
                        message: "stage s3 needs the s1-small model".into(),
                    })?;
                ctx.workdir.join(rel)
            } else {
                resolve(
                    ctx.workdir,
                    config.small_source.as_ref().expect("validated small_source"),
                )
            }
        }
    };
    if !base_model.is_file() {
        return Err(PipelineError::Config {
            message: format!(
                "base model for stage {stage} does not exist: {}",
                base_model.display()
            ),
        });
    }

    log::info!("stage {stage}: training ({} epochs)", stage_config.epochs);
    let request = TrainRequest {
        base_model: base_model.clone(),
        train_manifest: data.train_manifest.clone(),
        label_provenance_dir: data
            .train_manifest
            .parent()
            .expect("train manifest has a parent")
            .to_path_buf(),
        freeze: stage_config.freeze.request_value().to_string(),
        epochs: stage_config.epochs,
        alpha: stage_config.weights.alpha,
        beta: stage_config.weights.beta,
        lr: stage_config.lr,
        seed,
        output_model: stage_dir.join("model.json"),
    };
    let model = run_training(
        &config.trainer,
        &request,
        &ctx.request_path(stage, "train"),
        &format!("stage {stage} training"),
    )?;

    let eval = match &ctx.val_manifest {
        Some(val_path) => {
            log::info!("stage {stage}: evaluating");
            let val = DatasetManifest::load(val_path)?;
            let preds_dir = stage_dir.join("eval").join("preds");
            run_inference(
                &config.detector,
                &model,
                &val,
                val_path,
                &preds_dir,
                &ctx.request_path(stage, "eval"),
                &format!("stage {stage} evaluation"),
            )?;
            Some(map50(&val, val_path, &preds_dir, config.eval_mode)?)
        }
        None => None,
    };

    let report = StageReport {
        stage,
        config: stage_config,
        seed,
        base_model: ctx.rel(&base_model),
        model: ctx.rel(&model),
        prepare: data.report,
        eval,
    };
    let report_path = stage_dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| PipelineError::Json {
        path: report_path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&report_path, text.as_bytes()).map_err(|e| PipelineError::io(&report_path, e))?;
    Ok((model, report))
}

/// Runs (or resumes) the full schedule in `workdir`.
///
/// `stop_after` halts the run once that period completes without
/// entering the configuration digest, so a later call on the same
/// workdir resumes cleanly.
pub fn run_pipeline(
    config: &RunConfig,
    workdir: &Path,
    stop_after: Option<StageId>,
) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(workdir).map_err(|e| PipelineError::io(workdir, e))?;
    let digest = config.digest();
    let state_path = workdir.join("state.json");
    let mut state = if state_path.is_file() {
        let state = PipelineState::load(&state_path)?;
        state.check_resume(config.seed, &digest)?;
        state.validate_artifacts(workdir)?;
        log::info!(
            "resuming after {} completed stage(s)",
            state.completed.len()
        );
        state
    } else {
        PipelineState::new(config.seed, digest)
    };

    let ctx = RunContext {
        workdir,
        config,
        source_manifest: resolve(workdir, &config.source_manifest),
        target_manifest: resolve(workdir, &config.target_manifest),
        val_manifest: config.val_manifest.as_ref().map(|p| resolve(workdir, p)),
    };

    let sequence = StageId::sequence(config.train_s1_small);
    let mut stopped_early = false;
    for stage in sequence {
        if !state.is_complete(stage) {
            let (model, _report) = run_stage(&ctx, &state, stage)?;
            let model_rel = relative_path(workdir, &model);
            state.mark_complete(stage, model_rel)?;
            state.save(&state_path)?;
            log::info!("stage {stage}: complete");
        }
        if stop_after == Some(stage) {
            stopped_early = state.completed.len() < StageId::sequence(config.train_s1_small).len();
            break;
        }
    }

    let summary = RunSummary {
        completed: state.completed.clone(),
        large_model: state
            .latest_model(ModelRole::Large)
            .map(|p| display_slash(p)),
        small_model: state
            .latest_model(ModelRole::Small)
            .map(|p| display_slash(p)),
        stopped_early,
    };
    let summary_path = workdir.join("run.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| PipelineError::Json {
        path: summary_path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&summary_path, text.as_bytes()).map_err(|e| PipelineError::io(&summary_path, e))?;
    Ok(summary)
}
