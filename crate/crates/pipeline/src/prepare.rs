//! Per-period training data preparation.
//!
//! For a source period the training manifest simply re-roots the
//! source dataset under the stage directory. For an adaptation period
//! the pseudo-label snapshot is corrected by the difficulty-aware
//! curriculum, accepted labels are materialized as a self-contained
//! dataset, augmentation pastes source objects into those images, and
//! the final manifest merges source data, augmented target data, and
//! the remaining unlabeled target images. Every artifact lives under
//! the stage directory and every manifest uses relative paths, so two
//! runs in different working directories produce byte-identical trees.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nsn_core::annotations::{
    load_labels, save_labels, BBox, DatasetManifest, Domain, LabelKind, LabeledBox, ManifestEntry,
    Split,
};
use nsn_core::curriculum::{
    adaptive_thresholds, apply_thresholds, candidate_filter, AdaptiveThresholds, ConfidenceRecord,
    CurriculumBounds, ThresholdDecision,
};
use nsn_core::difficulty::{
    category_key, partition_dataset, DifficultyCategory, DifficultyThresholds, PartitionReport,
};
use nsn_core::imaging::image_dims;
use nsn_core::mca::{augment_dataset, build_crop_library, AugmentConfig};

use crate::error::PipelineError;
use crate::paths::{display_slash, relative_path};
use crate::Result;

/// Counters and settings recorded for one period's data preparation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepareReport {
    /// Raw predictions in the pseudo snapshot.
    pub pseudo_boxes: usize,
    /// Predictions above the candidate floor.
    pub candidates: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// Target images with at least one accepted label.
    pub accepted_images: usize,
    pub fallback_all_max: bool,
    pub candidates_by_category: BTreeMap<String, usize>,
    pub accepted_by_category: BTreeMap<String, usize>,
    pub thresholds_by_category: BTreeMap<String, f64>,
    pub augmented_images: usize,
    pub pastes_placed: usize,
    pub pastes_skipped: usize,
    pub poisson_fallbacks: usize,
    /// Stage-relative path of the training manifest.
    pub train_manifest: String,
}

impl PrepareReport {
    fn empty(train_manifest: &str) -> Self {
        PrepareReport {
            pseudo_boxes: 0,
            candidates: 0,
            accepted: 0,
            rejected: 0,
            accepted_images: 0,
            fallback_all_max: false,
            candidates_by_category: BTreeMap::new(),
            accepted_by_category: BTreeMap::new(),
            thresholds_by_category: BTreeMap::new(),
            augmented_images: 0,
            pastes_placed: 0,
            pastes_skipped: 0,
            poisson_fallbacks: 0,
            train_manifest: train_manifest.to_string(),
        }
    }
}

/// Prepared data for one period: the manifest the trainer will read
/// plus the preparation counters.
#[derive(Debug)]
pub struct StageData {
    pub train_manifest: PathBuf,
    pub report: PrepareReport,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text.as_bytes()).map_err(|e| PipelineError::io(path, e))
}

fn manifest_entries_relative_to(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    stage_dir: &Path,
    domain: Domain,
) -> Vec<ManifestEntry> {
    manifest
        .resolve_entries(manifest_path)
        .into_iter()
        .map(|e| ManifestEntry {
            image: display_slash(&relative_path(stage_dir, &e.image)),
            label: e
                .label
                .map(|l| display_slash(&relative_path(stage_dir, &l))),
            domain: Some(domain),
        })
        .collect()
}

/// Builds the training manifest for a source-only period: the source
/// dataset re-rooted at the stage directory.
pub fn prepare_source_stage(stage_dir: &Path, source_manifest_path: &Path) -> Result<StageData> {
    fs::create_dir_all(stage_dir).map_err(|e| PipelineError::io(stage_dir, e))?;
    let source = DatasetManifest::load(source_manifest_path)?;
    let mut merged = DatasetManifest::new(".", Split::Train, Domain::Source);
    merged.entries =
        manifest_entries_relative_to(&source, source_manifest_path, stage_dir, Domain::Source);
    let train_manifest = stage_dir.join("train.manifest.json");
    merged.save(&train_manifest)?;
    Ok(StageData {
        train_manifest,
        report: PrepareReport::empty("train.manifest.json"),
    })
}

struct TargetImage {
    key: String,
    image: PathBuf,
    boxes: Vec<LabeledBox>,
}

/// A scored pseudo snapshot: candidates with difficulty categories,
/// the adaptive thresholds, and every accept/reject decision.
pub struct SnapshotScore {
    images: Vec<TargetImage>,
    pub pseudo_boxes: usize,
    pub records: Vec<ConfidenceRecord>,
    pub thresholds: AdaptiveThresholds,
    pub decisions: Vec<ThresholdDecision>,
    pub partition: PartitionReport,
}

impl SnapshotScore {
    /// Accepted (image key, box index) pairs with their confidences.
    pub fn accepted(&self) -> BTreeMap<(String, usize), f64> {
        self.decisions
            .iter()
            .filter(|d| d.accepted)
            .map(|d| ((d.image.clone(), d.box_index), d.confidence))
            .collect()
    }
}

fn load_snapshot(
    target: &DatasetManifest,
    target_path: &Path,
    pseudo_dir: &Path,
) -> Result<Vec<TargetImage>> {
    let mut out = Vec::new();
    for e in target.resolve_entries(target_path) {
        let stem = Path::new(&e.key)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| e.key.clone());
        let pred = pseudo_dir.join(format!("{stem}.txt"));
        if !pred.is_file() {
            return Err(PipelineError::State {
                message: format!(
                    "pseudo snapshot {} has no prediction file for {}",
                    pseudo_dir.display(),
                    e.key
                ),
            });
        }
        let dims = image_dims(&e.image)?;
        let boxes = load_labels(&pred, dims, LabelKind::Pseudo)?;
        out.push(TargetImage {
            key: e.key,
            image: e.image,
            boxes,
        });
    }
    Ok(out)
}

/// Scores candidate boxes and returns each candidate's category, keyed
/// by image key and the box's index in its prediction file.
fn categorize_candidates(
    images: &[TargetImage],
    candidates: &[(String, usize, f64, BBox)],
    thresholds: &DifficultyThresholds,
) -> Result<(
    BTreeMap<(String, usize), DifficultyCategory>,
    PartitionReport,
)> {
    let mut boxes: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
    let mut positions: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (key, idx, _conf, bbox) in candidates {
        boxes.entry(key.clone()).or_default().push(*bbox);
        positions.entry(key.clone()).or_default().push(*idx);
    }
    let listed: Vec<(String, PathBuf)> = images
        .iter()
        .filter(|t| boxes.contains_key(&t.key))
        .map(|t| (t.key.clone(), t.image.clone()))
        .collect();
    let report = partition_dataset(&listed, &boxes, thresholds, None)?;
    if let Some(issue) = report.errors.first() {
        return Err(PipelineError::State {
            message: format!(
                "difficulty scoring failed for {}: {}",
                issue.image, issue.message
            ),
        });
    }
    let mut categories = BTreeMap::new();
    for part in &report.images {
        let pos = &positions[&part.image];
        for scored in &part.boxes {
            categories.insert(
                (part.image.clone(), pos[scored.box_index]),
                scored.category,
            );
        }
    }
    Ok((categories, report))
}

/// Runs the full curriculum pass over a pseudo snapshot: candidate
/// filtering, difficulty scoring, adaptive thresholds, and decisions.
pub fn score_snapshot(
    pseudo_dir: &Path,
    target_manifest: &Path,
    bounds: CurriculumBounds,
    difficulty: &DifficultyThresholds,
) -> Result<SnapshotScore> {
    bounds.validate()?;
    difficulty.validate()?;
    let target = DatasetManifest::load(target_manifest)?;
    let images = load_snapshot(&target, target_manifest, pseudo_dir)?;
    let pseudo_boxes: usize = images.iter().map(|t| t.boxes.len()).sum();

    // Candidate filtering happens on raw confidences; categories are
    // computed only for survivors since rejected boxes never reach the
    // threshold rule.
    let mut flat: Vec<(String, usize, f64, BBox)> = Vec::new();
    for t in &images {
        for (i, b) in t.boxes.iter().enumerate() {
            let conf = b.confidence.ok_or_else(|| PipelineError::State {
                message: format!("pseudo box {}#{i} has no confidence", t.key),
            })?;
            flat.push((t.key.clone(), i, conf, b.bbox));
        }
    }
    let precheck: Vec<ConfidenceRecord> = flat
        .iter()
        .map(|(key, idx, conf, _)| ConfidenceRecord {
            image: key.clone(),
            box_index: *idx,
            category: DifficultyCategory::SmallTarget,
            confidence: *conf,
        })
        .collect();
    let survivor_keys: BTreeSet<(String, usize)> = candidate_filter(&precheck, bounds.tau_min)
        .into_iter()
        .map(|r| (r.image, r.box_index))
        .collect();
    let candidates: Vec<(String, usize, f64, BBox)> = flat
        .into_iter()
        .filter(|(key, idx, _, _)| survivor_keys.contains(&(key.clone(), *idx)))
        .collect();

    let (categories, partition) = categorize_candidates(&images, &candidates, difficulty)?;
    let records: Vec<ConfidenceRecord> = candidates
        .iter()
        .map(|(key, idx, conf, _)| ConfidenceRecord {
            image: key.clone(),
            box_index: *idx,
            category: categories[&(key.clone(), *idx)],
            confidence: *conf,
        })
        .collect();
    let thresholds = adaptive_thresholds(&records, bounds)?;
    let decisions = apply_thresholds(&records, &thresholds);
    Ok(SnapshotScore {
        images,
        pseudo_boxes,
        records,
        thresholds,
        decisions,
        partition,
    })
}

/// Writes accept/reject decisions as one JSON document per line.
pub fn write_decisions_file(path: &Path, decisions: &[ThresholdDecision]) -> Result<()> {
    let mut text = String::new();
    for d in decisions {
        let line = serde_json::to_string(d).map_err(|e| PipelineError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text.as_bytes()).map_err(|e| PipelineError::io(path, e))
}

/// Writes the accepted labels as a self-contained dataset under
/// `out_dir`: images are copied next to their label files so the tree
/// uses only clean relative keys. Returns the manifest path and the
/// number of images kept.
pub fn write_accepted_dataset(out_dir: &Path, score: &SnapshotScore) -> Result<(PathBuf, usize)> {
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| PipelineError::io(&images_dir, e))?;
    let accepted = score.accepted();
    let mut manifest = DatasetManifest::new(".", Split::Train, Domain::Target);
    let mut kept_images = 0usize;
    for t in &score.images {
        let kept: Vec<LabeledBox> = t
            .boxes
            .iter()
            .enumerate()
            .filter(|(i, _)| accepted.contains_key(&(t.key.clone(), *i)))
            .map(|(_, b)| b.clone())
            .collect();
        if kept.is_empty() {
            continue;
        }
        kept_images += 1;
        let filename = t
            .image
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .ok_or_else(|| PipelineError::State {
                message: format!("image path {} has no file name", t.image.display()),
            })?;
        let stem = Path::new(&filename)
            .file_stem()
            .expect("file name has a stem")
            .to_string_lossy()
            .into_owned();
        fs::copy(&t.image, images_dir.join(&filename))
            .map_err(|e| PipelineError::io(&t.image, e))?;
        save_labels(&kept, &images_dir.join(format!("{stem}.txt")))?;
        manifest.entries.push(ManifestEntry {
            image: format!("images/{filename}"),
            label: Some(format!("images/{stem}.txt")),
            domain: None,
        });
    }
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    Ok((manifest_path, kept_images))
}

/// Everything an adaptation period needs to turn a pseudo snapshot
/// into training data.
pub struct AdaptiveStageInputs<'a> {
    pub stage_dir: &'a Path,
    /// Directory of `<stem>.txt` prediction files for the target set.
    pub pseudo_dir: &'a Path,
    pub source_manifest: &'a Path,
    pub target_manifest: &'a Path,
    pub bounds: CurriculumBounds,
    pub difficulty: DifficultyThresholds,
    /// Augmentation settings; the seed must already be period-specific.
    pub augment: AugmentConfig,
    /// Directory of `<stem>.mask.png` object masks for source images.
    pub external_masks: Option<PathBuf>,
}

/// Runs curriculum correction and augmentation for one adaptation
/// period and writes the merged training manifest.
pub fn prepare_adaptive_stage(inputs: &AdaptiveStageInputs) -> Result<StageData> {
    let stage_dir = inputs.stage_dir;
    fs::create_dir_all(stage_dir).map_err(|e| PipelineError::io(stage_dir, e))?;
    inputs.augment.validate()?;

    let score = score_snapshot(
        inputs.pseudo_dir,
        inputs.target_manifest,
        inputs.bounds,
        &inputs.difficulty,
    )?;
    write_json(&stage_dir.join("difficulty.json"), &score.partition)?;
    write_json(&stage_dir.join("pcl.thresholds.json"), &score.thresholds)?;
    write_decisions_file(&stage_dir.join("pcl.decisions.jsonl"), &score.decisions)?;

    let accepted = score.accepted();
    let mut report = PrepareReport::empty("train.manifest.json");
    report.pseudo_boxes = score.pseudo_boxes;
    report.candidates = score.records.len();
    report.accepted = accepted.len();
    report.rejected = score.records.len() - accepted.len();
    report.fallback_all_max = score.thresholds.fallback_all_max;
    for r in &score.records {
        *report
            .candidates_by_category
            .entry(category_key(r.category))
            .or_insert(0) += 1;
    }
    for d in score.decisions.iter().filter(|d| d.accepted) {
        *report
            .accepted_by_category
            .entry(category_key(d.category))
            .or_insert(0) += 1;
    }
    for (c, tau) in &score.thresholds.thresholds {
        report.thresholds_by_category.insert(category_key(*c), *tau);
    }

    let (accepted_manifest, accepted_images) =
        write_accepted_dataset(&stage_dir.join("accepted"), &score)?;
    report.accepted_images = accepted_images;

    // Augmentation only runs when something was accepted; an empty
    // period still trains on source data plus unlabeled target images.
    let mut augmented_entries: Vec<ManifestEntry> = Vec::new();
    if accepted_images > 0 {
        let source = DatasetManifest::load(inputs.source_manifest)?;
        let (library, _lib_report) = build_crop_library(
            &source,
            inputs.source_manifest,
            inputs.external_masks.as_deref(),
            inputs.augment.allow_degraded,
        )?;
        let accepted_loaded = DatasetManifest::load(&accepted_manifest)?;
        let augmented_dir = stage_dir.join("augmented");
        let aug_report = augment_dataset(
            &accepted_loaded,
            &accepted_manifest,
            &library,
            &inputs.augment,
            &augmented_dir,
        )?;
        if let Some(f) = aug_report.failures.first() {
            return Err(PipelineError::State {
                message: format!("augmentation failed for {}: {}", f.image, f.message),
            });
        }
        report.augmented_images = aug_report.augmented;
        report.pastes_placed = aug_report.pastes_placed;
        report.pastes_skipped = aug_report.pastes_skipped;
        report.poisson_fallbacks = aug_report.poisson_fallbacks;
        let aug_manifest_path = augmented_dir.join("manifest.json");
        let aug_manifest = DatasetManifest::load(&aug_manifest_path)?;
        for e in &aug_manifest.entries {
            augmented_entries.push(ManifestEntry {
                image: format!("augmented/{}", e.image),
                label: e.label.as_ref().map(|l| format!("augmented/{l}")),
                domain: Some(Domain::TargetAugmented),
            });
        }
    }

    let source = DatasetManifest::load(inputs.source_manifest)?;
    let mut merged = DatasetManifest::new(".", Split::Train, Domain::Source);
    merged.entries = manifest_entries_relative_to(
        &source,
        inputs.source_manifest,
        stage_dir,
        Domain::Source,
    );
    merged.entries.extend(augmented_entries);
    let augmented_keys: BTreeSet<&String> = score
        .images
        .iter()
        .filter(|t| {
            t.boxes
                .iter()
                .enumerate()
                .any(|(i, _)| accepted.contains_key(&(t.key.clone(), i)))
        })
        .map(|t| &t.key)
        .collect();
    for t in &score.images {
        if augmented_keys.contains(&t.key) {
            continue;
        }
        merged.entries.push(ManifestEntry {
            image: display_slash(&relative_path(stage_dir, &t.image)),
            label: None,
            domain: Some(Domain::Target),
        });
    }
    let train_manifest = stage_dir.join("train.manifest.json");
    merged.save(&train_manifest)?;

    Ok(StageData {
        train_manifest,
        report,
    })
}
