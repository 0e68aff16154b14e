//! Subcommand implementations and global-option resolution.
//!
//! Every subcommand produces an `Outcome`: one JSON document for
//! `--json`, a text rendering otherwise, and an optional problem
//! message that turns a completed-but-failing check into exit code 1.
//! Nothing here prints timing or timestamps, so identical invocations
//! on identical inputs produce identical stdout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::json;

use nsn_core::annotations::{
    load_labels, save_labels, validate_dataset, BBox, DatasetManifest, Domain, LabelKind, Split,
};
use nsn_core::curriculum::CurriculumBounds;
use nsn_core::difficulty::{category_key, partition_dataset, DifficultyCategory, DifficultyThresholds};
use nsn_core::eval::{adaptation_gain, map50, AdaptationGainInputs, IntegrationMode};
use nsn_core::imaging::image_dims;
use nsn_core::mca::{augment_dataset, build_crop_library, AugmentConfig};
use nsn_pipeline::fixtures::stub::{infer_one, serve_infer, serve_train};
use nsn_pipeline::fixtures::{DetectCorruption, LearnSpec, SceneSpec, StubModel};
use nsn_pipeline::prepare::{score_snapshot, write_accepted_dataset, write_decisions_file};
use nsn_pipeline::run::{run_pipeline, RunConfig};

use crate::{
    AugmentArgs, Command, CropsArgs, DifficultyArgs, DomainArg, EvalArgs, FilterArgs, GainArgs,
    GlobalArgs, ModeArg, RunArgs, SnapshotArgs, SplitArg, StubAction, StubAdapterArgs,
    StubDetectArgs, SynthArgs, ThresholdFlags, ValidateArgs,
};

/// Result of a subcommand that ran to completion.
pub struct Outcome {
    /// The single document printed under `--json`.
    pub doc: serde_json::Value,
    /// Text rendering printed otherwise; ends with a newline.
    pub human: String,
    /// When set, the report is still printed but the process exits 1.
    pub problem: Option<String>,
}

impl Outcome {
    fn ok(doc: serde_json::Value, human: String) -> Self {
        Outcome {
            doc,
            human,
            problem: None,
        }
    }
}

/// Settings file read through the global `--config` flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DefaultsFile {
    seed: Option<u64>,
    jobs: Option<usize>,
    workdir: Option<PathBuf>,
}

/// Resolved global options: explicit flags override config-file values
/// override environment defaults.
pub struct Globals {
    seed: Option<u64>,
    pub jobs: Option<usize>,
    workdir: Option<PathBuf>,
    pub json: bool,
}

fn env_parsed<T: std::str::FromStr>(name: &str) -> Result<Option<T>, String> {
    match std::env::var(name) {
        Ok(text) => text
            .parse()
            .map(Some)
            .map_err(|_| format!("cannot parse {name}={text}")),
        Err(_) => Ok(None),
    }
}

impl Globals {
    pub fn resolve(args: &GlobalArgs) -> Result<Self, String> {
        let file = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
                serde_json::from_str::<DefaultsFile>(&text)
                    .map_err(|e| format!("cannot parse config {}: {e}", path.display()))?
            }
            None => DefaultsFile::default(),
        };
        let workdir_env = std::env::var_os("NSN_WORKDIR").map(PathBuf::from);
        Ok(Globals {
            seed: args.seed.or(file.seed).or(env_parsed("NSN_SEED")?),
            jobs: args.jobs.or(file.jobs).or(env_parsed("NSN_JOBS")?),
            workdir: args.workdir.clone().or(file.workdir).or(workdir_env),
            json: args.json,
        })
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn workdir(&self) -> PathBuf {
        self.workdir.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

pub fn run_command(command: &Command, globals: &Globals) -> Result<Outcome, String> {
    match command {
        Command::Validate(args) => cmd_validate(args),
        Command::Difficulty(args) => cmd_difficulty(args),
        Command::Thresholds(args) => cmd_thresholds(args),
        Command::Filter(args) => cmd_filter(args),
        Command::Crops(args) => cmd_crops(args),
        Command::Augment(args) => cmd_augment(args, globals),
        Command::Eval(args) => cmd_eval(args),
        Command::Gain(args) => cmd_gain(args),
        Command::Synth(args) => cmd_synth(args, globals),
        Command::StubDetect(args) => cmd_stub_detect(args, globals),
        Command::Run(args) => cmd_run(args, globals),
        Command::StubAdapter(args) => cmd_stub_adapter(args),
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn to_doc<T: serde::Serialize>(value: &T) -> Result<serde_json::Value, String> {
    serde_json::to_value(value).map_err(fail)
}

impl ThresholdFlags {
    fn to_thresholds(&self) -> DifficultyThresholds {
        let d = DifficultyThresholds::default();
        DifficultyThresholds {
            target_size: self.target_size.unwrap_or(d.target_size),
            local_contrast: self.local_contrast.unwrap_or(d.local_contrast),
            background_complexity: self
                .background_complexity
                .unwrap_or(d.background_complexity),
            expansion_factor: self.expansion_factor.unwrap_or(d.expansion_factor),
        }
    }
}

impl SnapshotArgs {
    fn bounds(&self) -> CurriculumBounds {
        let d = CurriculumBounds::default();
        CurriculumBounds {
            tau_min: self.tau_min.unwrap_or(d.tau_min),
            tau_max: self.tau_max.unwrap_or(d.tau_max),
        }
    }
}

impl ModeArg {
    fn to_mode(self) -> IntegrationMode {
        match self {
            ModeArg::AllPoint => IntegrationMode::AllPoint,
            ModeArg::ElevenPoint => IntegrationMode::ElevenPoint,
        }
    }
}

impl SplitArg {
    fn to_split(self) -> Split {
        match self {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

impl DomainArg {
    fn to_domain(self) -> Domain {
        match self {
            DomainArg::Source => Domain::Source,
            DomainArg::Target => Domain::Target,
            DomainArg::TargetAugmented => Domain::TargetAugmented,
        }
    }
}

fn cmd_validate(args: &ValidateArgs) -> Result<Outcome, String> {
    let manifest = DatasetManifest::load(&args.manifest).map_err(fail)?;
    let report = validate_dataset(&manifest, &args.manifest);
    let mut human = String::new();
    let _ = writeln!(human, "images: {}", report.images);
    let _ = writeln!(human, "boxes: {}", report.boxes);
    let _ = writeln!(human, "ground truth boxes: {}", report.ground_truth_boxes);
    let _ = writeln!(human, "pseudo boxes: {}", report.pseudo_boxes);
    let _ = writeln!(human, "pasted boxes: {}", report.pasted_boxes);
    let _ = writeln!(human, "unlabeled images: {}", report.unlabeled_images);
    let _ = writeln!(human, "issues: {}", report.errors.len());
    for issue in &report.errors {
        let _ = writeln!(human, "  {}: {}", issue.entry, issue.message);
    }
    let problem = if report.errors.is_empty() {
        None
    } else {
        Some(format!("{} validation issue(s)", report.errors.len()))
    };
    Ok(Outcome {
        doc: to_doc(&report)?,
        human,
        problem,
    })
}

fn cmd_difficulty(args: &DifficultyArgs) -> Result<Outcome, String> {
    let thresholds = args.thresholds.to_thresholds();
    let manifest = DatasetManifest::load(&args.manifest).map_err(fail)?;
    let mut listed: Vec<(String, PathBuf)> = Vec::new();
    let mut boxes: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
    for e in manifest.resolve_entries(&args.manifest) {
        let Some(label) = &e.label else { continue };
        let dims = image_dims(&e.image).map_err(fail)?;
        let labeled = load_labels(label, dims, LabelKind::GroundTruth).map_err(fail)?;
        boxes.insert(e.key.clone(), labeled.into_iter().map(|b| b.bbox).collect());
        listed.push((e.key, e.image));
    }
    let report = partition_dataset(&listed, &boxes, &thresholds, None).map_err(fail)?;

    let mut human = String::new();
    let total: usize = report.counts.values().sum();
    for category in DifficultyCategory::ALL {
        let key = category_key(category);
        let count = report.counts.get(&key).copied().unwrap_or(0);
        let _ = writeln!(human, "{key}: {count}");
    }
    let _ = writeln!(human, "total boxes: {total}");
    let _ = writeln!(human, "images scored: {}", report.images.len());
    for issue in &report.errors {
        let _ = writeln!(human, "  {}: {}", issue.image, issue.message);
    }
    let problem = if report.errors.is_empty() {
        None
    } else {
        Some(format!("{} image(s) failed scoring", report.errors.len()))
    };
    Ok(Outcome {
        doc: to_doc(&report)?,
        human,
        problem,
    })
}

fn cmd_thresholds(args: &SnapshotArgs) -> Result<Outcome, String> {
    let score = score_snapshot(
        &args.predictions,
        &args.manifest,
        args.bounds(),
        &args.thresholds.to_thresholds(),
    )
    .map_err(fail)?;
    let doc = json!({
        "pseudo_boxes": score.pseudo_boxes,
        "candidates": score.records.len(),
        "adaptive": to_doc(&score.thresholds)?,
    });
    let mut human = String::new();
    let _ = writeln!(human, "pseudo boxes: {}", score.pseudo_boxes);
    let _ = writeln!(human, "candidates: {}", score.records.len());
    let _ = writeln!(human, "category              candidates   sigma    tau");
    for category in DifficultyCategory::ALL {
        let stat = score.thresholds.stats.get(&category);
        let _ = writeln!(
            human,
            "{:<20}  {:>10}  {:>6.4}  {:>5.4}",
            category_key(category),
            stat.map_or(0, |s| s.candidates),
            stat.map_or(0.0, |s| s.sigma),
            score.thresholds.threshold(category),
        );
    }
    if score.thresholds.fallback_all_max {
        let _ = writeln!(
            human,
            "no candidate cleared the ceiling; every threshold fell back to tau-max"
        );
    }
    Ok(Outcome::ok(doc, human))
}

fn cmd_filter(args: &FilterArgs) -> Result<Outcome, String> {
    let snapshot = &args.snapshot;
    let score = score_snapshot(
        &snapshot.predictions,
        &snapshot.manifest,
        snapshot.bounds(),
        &snapshot.thresholds.to_thresholds(),
    )
    .map_err(fail)?;
    fs::create_dir_all(&args.out)
        .map_err(|e| format!("cannot create {}: {e}", args.out.display()))?;
    let (manifest_path, accepted_images) =
        write_accepted_dataset(&args.out, &score).map_err(fail)?;
    let thresholds_text = serde_json::to_string_pretty(&score.thresholds).map_err(fail)?;
    let thresholds_path = args.out.join("pcl.thresholds.json");
    fs::write(&thresholds_path, thresholds_text)
        .map_err(|e| format!("cannot write {}: {e}", thresholds_path.display()))?;
    write_decisions_file(&args.out.join("pcl.decisions.jsonl"), &score.decisions)
        .map_err(fail)?;

    let accepted = score.decisions.iter().filter(|d| d.accepted).count();
    let doc = json!({
        "out": args.out.display().to_string(),
        "manifest": manifest_path.display().to_string(),
        "pseudo_boxes": score.pseudo_boxes,
        "candidates": score.records.len(),
        "accepted": accepted,
        "rejected": score.records.len() - accepted,
        "accepted_images": accepted_images,
        "fallback_all_max": score.thresholds.fallback_all_max,
    });
    let mut human = String::new();
    let _ = writeln!(human, "pseudo boxes: {}", score.pseudo_boxes);
    let _ = writeln!(human, "candidates: {}", score.records.len());
    let _ = writeln!(human, "accepted: {accepted}");
    let _ = writeln!(human, "rejected: {}", score.records.len() - accepted);
    let _ = writeln!(human, "accepted images: {accepted_images}");
    let _ = writeln!(human, "manifest: {}", manifest_path.display());
    Ok(Outcome::ok(doc, human))
}

fn cmd_crops(args: &CropsArgs) -> Result<Outcome, String> {
    let manifest = DatasetManifest::load(&args.manifest).map_err(fail)?;
    let (assets, report) = build_crop_library(
        &manifest,
        &args.manifest,
        args.masks.as_deref(),
        args.allow_degraded,
    )
    .map_err(fail)?;
    let mut human = String::new();
    let _ = writeln!(human, "crops kept: {}", report.kept);
    let _ = writeln!(human, "external masks used: {}", report.external_masks);
    let _ = writeln!(human, "degraded masks kept: {}", report.degraded_kept);
    let _ = writeln!(human, "excluded: {}", report.excluded.len());
    for e in &report.excluded {
        let _ = writeln!(human, "  {}: {}", e.id, e.reason);
    }
    debug_assert_eq!(assets.len(), report.kept);
    Ok(Outcome::ok(to_doc(&report)?, human))
}

fn cmd_augment(args: &AugmentArgs, globals: &Globals) -> Result<Outcome, String> {
    let accepted = DatasetManifest::load(&args.manifest).map_err(fail)?;
    let source = DatasetManifest::load(&args.crops).map_err(fail)?;
    let defaults = AugmentConfig::default();
    let config = AugmentConfig {
        pastes: args.pastes.unwrap_or(defaults.pastes),
        seed: globals.seed(),
        max_retries: args.max_retries.unwrap_or(defaults.max_retries),
        overlap_limit: args.overlap_limit.unwrap_or(defaults.overlap_limit),
        allow_overlap: args.allow_overlap,
        allow_degraded: args.allow_degraded,
        size_fallback: !args.no_size_fallback,
        ..defaults
    };
    config.validate().map_err(fail)?;
    let (library, _lib_report) = build_crop_library(
        &source,
        &args.crops,
        args.masks.as_deref(),
        config.allow_degraded,
    )
    .map_err(fail)?;
    let report =
        augment_dataset(&accepted, &args.manifest, &library, &config, &args.out).map_err(fail)?;
    let mut human = String::new();
    let _ = writeln!(human, "images: {}", report.images);
    let _ = writeln!(human, "augmented: {}", report.augmented);
    let _ = writeln!(human, "passed through: {}", report.passed_through);
    let _ = writeln!(human, "pastes placed: {}", report.pastes_placed);
    let _ = writeln!(human, "pastes skipped: {}", report.pastes_skipped);
    let _ = writeln!(human, "poisson fallbacks: {}", report.poisson_fallbacks);
    let _ = writeln!(human, "manifest: {}", report.output_manifest);
    for f in &report.failures {
        let _ = writeln!(human, "  {}: {}", f.image, f.message);
    }
    let problem = if report.failures.is_empty() {
        None
    } else {
        Some(format!("{} image(s) failed augmentation", report.failures.len()))
    };
    Ok(Outcome {
        doc: to_doc(&report)?,
        human,
        problem,
    })
}

fn cmd_eval(args: &EvalArgs) -> Result<Outcome, String> {
    let manifest = DatasetManifest::load(&args.manifest).map_err(fail)?;
    let report = map50(
        &manifest,
        &args.manifest,
        &args.predictions,
        args.mode.to_mode(),
    )
    .map_err(fail)?;
    let mut human = String::new();
    let _ = writeln!(human, "map50: {}", report.map_display);
    let _ = writeln!(human, "true positives: {}", report.tp);
    let _ = writeln!(human, "false positives: {}", report.fp);
    let _ = writeln!(human, "missed: {}", report.fn_count);
    let _ = writeln!(
        human,
        "missing prediction files: {}",
        report.missing_prediction_files
    );
    Ok(Outcome::ok(to_doc(&report)?, human))
}

fn cmd_gain(args: &GainArgs) -> Result<Outcome, String> {
    let report = adaptation_gain(AdaptationGainInputs {
        map_adapted: args.adapted,
        map_source_only: args.source,
        map_oracle: args.oracle,
    })
    .map_err(fail)?;
    let human = format!(
        "adaptation gain: {}% (adapted {}, source-only {}, oracle {})\n",
        report.rho_display, report.theta_a, report.theta_s, report.theta_o
    );
    Ok(Outcome::ok(to_doc(&report)?, human))
}

fn cmd_synth(args: &SynthArgs, globals: &Globals) -> Result<Outcome, String> {
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| format!("cannot read spec {}: {e}", args.spec.display()))?;
    let mut spec: SceneSpec = serde_json::from_str(&text)
        .map_err(|e| format!("cannot parse spec {}: {e}", args.spec.display()))?;
    if let Some(seed) = globals.seed {
        spec.seed = seed;
    }
    let manifest = nsn_pipeline::fixtures::generate_domain(
        &spec,
        args.count,
        &args.out,
        args.split.to_split(),
        args.domain.to_domain(),
    )
    .map_err(fail)?;
    let doc = json!({
        "manifest": manifest.display().to_string(),
        "images": args.count,
        "seed": spec.seed,
        "masks": spec.emit_masks,
    });
    let human = format!(
        "wrote {} images under {}\nmanifest: {}\n",
        args.count,
        args.out.display(),
        manifest.display()
    );
    Ok(Outcome::ok(doc, human))
}

fn cmd_stub_detect(args: &StubDetectArgs, globals: &Globals) -> Result<Outcome, String> {
    let manifest = DatasetManifest::load(&args.manifest).map_err(fail)?;
    // Quality zero applies the corruption spec at full strength, so
    // the flag defaults reproduce ground truth exactly.
    let model = StubModel {
        quality: 0.0,
        seed: globals.seed(),
        corruption: DetectCorruption {
            drop_rate: args.drop_rate,
            jitter_px: args.jitter_px,
            fp_rate: args.fp_rate,
            conf_floor: args.conf_floor,
            conf_ceil: args.conf_ceil,
        },
        learn: LearnSpec::default(),
    };
    fs::create_dir_all(&args.out)
        .map_err(|e| format!("cannot create {}: {e}", args.out.display()))?;
    let mut images = 0usize;
    let mut boxes = 0usize;
    for e in manifest.resolve_entries(&args.manifest) {
        let predictions = infer_one(&model, &e.image).map_err(fail)?;
        let stem = e
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| format!("image path {} has no stem", e.image.display()))?;
        save_labels(&predictions, &args.out.join(format!("{stem}.txt"))).map_err(fail)?;
        images += 1;
        boxes += predictions.len();
    }
    let doc = json!({
        "images": images,
        "boxes": boxes,
        "out": args.out.display().to_string(),
    });
    let human = format!(
        "wrote {boxes} predictions for {images} images under {}\n",
        args.out.display()
    );
    Ok(Outcome::ok(doc, human))
}

fn cmd_run(args: &RunArgs, globals: &Globals) -> Result<Outcome, String> {
    let config = RunConfig::load(&args.pipeline).map_err(fail)?;
    let workdir = globals.workdir();
    let summary = run_pipeline(&config, &workdir, args.stop_after).map_err(fail)?;
    let mut human = String::new();
    let stages: Vec<String> = summary.completed.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(human, "completed: {}", stages.join(" "));
    if let Some(m) = &summary.large_model {
        let _ = writeln!(human, "large model: {m}");
    }
    if let Some(m) = &summary.small_model {
        let _ = writeln!(human, "small model: {m}");
    }
    if summary.stopped_early {
        let _ = writeln!(human, "stopped early; rerun to resume");
    }
    Ok(Outcome::ok(to_doc(&summary)?, human))
}

fn cmd_stub_adapter(args: &StubAdapterArgs) -> Result<Outcome, String> {
    // The adapter protocol communicates through files; stdout stays
    // empty so the caller's capture holds only real diagnostics.
    let (verb, request): (&str, &Path) = match &args.action {
        StubAction::Infer { request } => {
            serve_infer(request).map_err(fail)?;
            ("infer", request)
        }
        StubAction::Train { request } => {
            serve_train(request).map_err(fail)?;
            ("train", request)
        }
    };
    let doc = json!({
        "served": verb,
        "request": request.display().to_string(),
    });
    Ok(Outcome::ok(doc, String::new()))
}
