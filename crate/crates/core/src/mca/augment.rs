//! Paste placement and dataset-level augmentation.
//!
//! Per image: one pseudo label is drawn as the size reference, then a
//! fixed number of library crops are drawn with replacement, resized
//! so their object tight box matches the reference's pixel dims,
//! placed uniformly at positions keeping the box fully inside the
//! image and at low overlap with every existing box, and composited by
//! gradient-domain blending. Each success adds one pasted-true label.

use crate::annotations::{
    load_labels_with_provenance, save_labels, DatasetManifest, Domain, LabelKind, LabeledBox,
    ManifestEntry, PixelRect,
};
use crate::error::CoreError;
use crate::imaging::{image_dims, load_image, poisson_blend, PoissonSolveParams, RasterImage};
use crate::mca::CropAsset;
use crate::util::keyed_rng;
use crate::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Pastes attempted per augmented image.
    pub pastes: usize,
    pub seed: u64,
    /// Placement draws per paste before giving up.
    pub max_retries: u32,
    /// Highest tolerated IoU between a placed box and any existing box.
    pub overlap_limit: f64,
    /// Place on the first draw without any overlap check.
    pub allow_overlap: bool,
    /// Keep degraded-mask crops in the library.
    pub allow_degraded: bool,
    /// Give images without pseudo labels a reference size drawn from
    /// the dataset-wide pseudo-size pool instead of passing through.
    pub size_fallback: bool,
    pub poisson: PoissonSolveParams,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            pastes: 3,
            seed: 0,
            max_retries: 25,
            overlap_limit: 0.3,
            allow_overlap: false,
            allow_degraded: false,
            size_fallback: false,
            poisson: PoissonSolveParams::default(),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pastes == 0 {
            return Err(CoreError::InvalidParameter {
                message: "pastes must be at least 1".into(),
            });
        }
        if self.max_retries == 0 {
            return Err(CoreError::InvalidParameter {
                message: "max_retries must be at least 1".into(),
            });
        }
        if !self.overlap_limit.is_finite() || !(0.0..=1.0).contains(&self.overlap_limit) {
            return Err(CoreError::InvalidParameter {
                message: format!("overlap_limit {} outside [0, 1]", self.overlap_limit),
            });
        }
        self.poisson.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PasteRecord {
    pub crop_id: String,
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
    /// The blend fell back to a direct masked copy.
    pub poisson_fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub crop_id: String,
    pub reason: String,
}

/// One line of the `.mca.jsonl` audit stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRecord {
    pub image: String,
    pub output_image: String,
    pub augmented: bool,
    /// Index of the pseudo label used as the size reference; absent
    /// for pass-through images and pool-sized ones.
    pub reference_index: Option<usize>,
    pub reference_dims: Option<(u32, u32)>,
    pub pastes: Vec<PasteRecord>,
    pub skips: Vec<SkipRecord>,
    /// Final position of the per-image random stream, in words.
    pub rng_word_pos: String,
}

impl AugmentationRecord {
    fn pass_through(key: &str) -> AugmentationRecord {
        AugmentationRecord {
            image: key.to_string(),
            output_image: key.to_string(),
            augmented: false,
            reference_index: None,
            reference_dims: None,
            pastes: Vec::new(),
            skips: Vec::new(),
            rng_word_pos: "0".into(),
        }
    }
}

/// Runs the paste loop against `image`, treating `obstacles` as boxes
/// that placements must keep low overlap with.
fn run_pastes(
    image: &RasterImage,
    obstacles: &mut Vec<PixelRect>,
    reference_dims: (u32, u32),
    library: &[CropAsset],
    config: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(RasterImage, Vec<LabeledBox>, Vec<PasteRecord>, Vec<SkipRecord>)> {
    let (w_ref, h_ref) = reference_dims;
    let (img_w, img_h) = (image.width, image.height);
    let mut out = image.clone();
    let mut added = Vec::new();
    let mut pastes = Vec::new();
    let mut skips = Vec::new();

    for _ in 0..config.pastes {
        let asset = &library[rng.gen_range(0..library.len())];
        // Keep a 1-pixel margin so the blended region never touches
        // the image border.
        let max_x = img_w as i64 - 1 - w_ref as i64;
        let max_y = img_h as i64 - 1 - h_ref as i64;
        if max_x < 1 || max_y < 1 {
            skips.push(SkipRecord {
                crop_id: asset.id.clone(),
                reason: format!(
                    "no feasible placement for {w_ref}x{h_ref} in {img_w}x{img_h}"
                ),
            });
            continue;
        }

        let (tx, ty, tw, th) = asset.tight_box;
        let sub_img = asset.image.crop(tx, ty, tw, th)?;
        let sub_mask = asset.mask.crop(tx, ty, tw, th)?;
        let resized_img = sub_img.resize_bilinear(w_ref, h_ref)?;
        let resized_mask = sub_mask.resize_bilinear(w_ref, h_ref)?;
        if resized_mask.count_on() == 0 {
            skips.push(SkipRecord {
                crop_id: asset.id.clone(),
                reason: format!("mask vanished when resized to {w_ref}x{h_ref}"),
            });
            continue;
        }

        let mut placed: Option<PixelRect> = None;
        for _ in 0..config.max_retries {
            let x = rng.gen_range(1..=max_x);
            let y = rng.gen_range(1..=max_y);
            let rect = PixelRect::from_xywh(x, y, w_ref, h_ref);
            let clear = config.allow_overlap
                || obstacles.iter().all(|o| rect.iou(o) <= config.overlap_limit);
            if clear {
                placed = Some(rect);
                break;
            }
        }
        let Some(rect) = placed else {
            skips.push(SkipRecord {
                crop_id: asset.id.clone(),
                reason: format!("placement retries exhausted ({})", config.max_retries),
            });
            continue;
        };

        let offset = (rect.x, rect.y);
        let (blended, fallback) =
            match poisson_blend(&out, &resized_img, &resized_mask, offset, &config.poisson) {
                Ok(img) => (img, false),
                Err(CoreError::Convergence { .. }) => {
                    let mut copied = out.clone();
                    for my in 0..h_ref {
                        for mx in 0..w_ref {
                            if resized_mask.get(mx, my) {
                                let px = (rect.x + mx as i64) as u32;
                                let py = (rect.y + my as i64) as u32;
                                for c in 0..copied.channels {
                                    copied.set(px, py, c, resized_img.get(mx, my, c));
                                }
                            }
                        }
                    }
                    (copied, true)
                }
                Err(e) => return Err(e),
            };
        out = blended;
        added.push(LabeledBox::pasted_true(rect.to_bbox(img_w, img_h)?));
        obstacles.push(rect);
        pastes.push(PasteRecord {
            crop_id: asset.id.clone(),
            x: rect.x,
            y: rect.y,
            w: rect.w,
            h: rect.h,
            poisson_fallback: fallback,
        });
    }
    Ok((out, added, pastes, skips))
}

/// Augments one pseudo-labeled image. Returns the composited image,
/// the merged label list (input pseudo labels plus pasted-true boxes),
/// and the audit record with its path fields left empty for the
/// caller to fill.
pub fn augment_image(
    image: &RasterImage,
    pseudo_labels: &[LabeledBox],
    library: &[CropAsset],
    config: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(RasterImage, Vec<LabeledBox>, AugmentationRecord)> {
    config.validate()?;
    if image.channels != 3 {
        return Err(CoreError::InvalidParameter {
            message: "augmentation requires an RGB image".into(),
        });
    }
    if pseudo_labels.is_empty() {
        return Err(CoreError::InvalidParameter {
            message: "augmentation requires at least one pseudo label".into(),
        });
    }
    if let Some(bad) = pseudo_labels.iter().position(|b| b.kind != LabelKind::Pseudo) {
        return Err(CoreError::InvalidParameter {
            message: format!("label at index {bad} is not a pseudo label"),
        });
    }
    if library.is_empty() {
        return Err(CoreError::CropLibrary {
            message: "crop library is empty".into(),
        });
    }

    let reference_index = rng.gen_range(0..pseudo_labels.len());
    let ref_rect = pseudo_labels[reference_index]
        .bbox
        .to_pixel_rect(image.width, image.height);
    let reference_dims = (ref_rect.w, ref_rect.h);

    let mut obstacles: Vec<PixelRect> = pseudo_labels
        .iter()
        .map(|b| b.bbox.to_pixel_rect(image.width, image.height))
        .collect();
    let (out, added, pastes, skips) = run_pastes(
        image,
        &mut obstacles,
        reference_dims,
        library,
        config,
        rng,
    )?;

    let mut labels = pseudo_labels.to_vec();
    labels.extend(added);
    let record = AugmentationRecord {
        image: String::new(),
        output_image: String::new(),
        augmented: true,
        reference_index: Some(reference_index),
        reference_dims: Some(reference_dims),
        pastes,
        skips,
        rng_word_pos: rng.get_word_pos().to_string(),
    };
    Ok((out, labels, record))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageFailure {
    pub image: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentRunReport {
    pub images: usize,
    pub augmented: usize,
    pub passed_through: usize,
    pub pastes_placed: usize,
    pub pastes_skipped: usize,
    pub poisson_fallbacks: usize,
    pub failures: Vec<ImageFailure>,
    pub output_manifest: String,
    pub records_file: String,
}

enum OutputAction {
    CopyImage(PathBuf),
    EncodeImage(RasterImage),
}

struct PlannedImage {
    rel_image: String,
    rel_label: Option<String>,
    action: OutputAction,
    labels: Option<Vec<LabeledBox>>,
    record: AugmentationRecord,
}

fn relative_or_fail(rel: &str) -> Result<&Path> {
    let p = Path::new(rel);
    if p.is_absolute() {
        return Err(CoreError::InvalidParameter {
            message: format!("absolute manifest path {rel:?} cannot be mirrored"),
        });
    }
    Ok(p)
}

fn plan_image(
    entry: &ManifestEntry,
    image_path: &Path,
    label_path: Option<&Path>,
    library: &[CropAsset],
    config: &AugmentConfig,
    size_pool: &[(u32, u32)],
) -> Result<PlannedImage> {
    let key = &entry.image;
    relative_or_fail(key)?;
    let dims = image_dims(image_path)?;
    let boxes = match label_path {
        Some(lp) => load_labels_with_provenance(lp, dims, LabelKind::Pseudo)?,
        None => Vec::new(),
    };
    if let Some(bad) = boxes.iter().position(|b| b.kind != LabelKind::Pseudo) {
        return Err(CoreError::InvalidParameter {
            message: format!("label at index {bad} is not a pseudo label"),
        });
    }
    let rel_label = match (&entry.label, boxes.is_empty()) {
        (Some(rel), _) => {
            relative_or_fail(rel)?;
            Some(rel.clone())
        }
        (None, false) => unreachable!("boxes came from a label file"),
        (None, true) => None,
    };

    if !boxes.is_empty() {
        let image = load_image(image_path)?.to_rgb();
        let mut rng = keyed_rng(config.seed, key);
        let (out, labels, mut record) =
            augment_image(&image, &boxes, library, config, &mut rng)?;
        let rel_out = Path::new(key).with_extension("png");
        record.image = key.clone();
        record.output_image = rel_out.to_string_lossy().into_owned();
        return Ok(PlannedImage {
            rel_image: record.output_image.clone(),
            rel_label,
            action: OutputAction::EncodeImage(out),
            labels: Some(labels),
            record,
        });
    }

    if config.size_fallback && !size_pool.is_empty() {
        let image = load_image(image_path)?.to_rgb();
        let mut rng = keyed_rng(config.seed, key);
        let reference_dims = size_pool[rng.gen_range(0..size_pool.len())];
        let mut obstacles = Vec::new();
        let (out, added, pastes, skips) = run_pastes(
            &image,
            &mut obstacles,
            reference_dims,
            library,
            config,
            &mut rng,
        )?;
        let rel_out = Path::new(key).with_extension("png");
        let rel_label = rel_label
            .unwrap_or_else(|| Path::new(key).with_extension("txt").to_string_lossy().into_owned());
        let record = AugmentationRecord {
            image: key.clone(),
            output_image: rel_out.to_string_lossy().into_owned(),
            augmented: true,
            reference_index: None,
            reference_dims: Some(reference_dims),
            pastes,
            skips,
            rng_word_pos: rng.get_word_pos().to_string(),
        };
        return Ok(PlannedImage {
            rel_image: record.output_image.clone(),
            rel_label: Some(rel_label),
            action: OutputAction::EncodeImage(out),
            labels: Some(added),
            record,
        });
    }

    Ok(PlannedImage {
        rel_image: key.clone(),
        rel_label: rel_label.clone(),
        action: OutputAction::CopyImage(image_path.to_path_buf()),
        labels: rel_label.map(|_| boxes),
        record: AugmentationRecord::pass_through(key),
    })
}

/// Augments every pseudo-labeled image of a manifest into a mirrored
/// tree under `output_dir`, copying unlabeled images through
/// unchanged, and writes merged labels, provenance sidecars, a
/// JSON-lines record stream, and an output manifest.
///
/// Per-image failures are collected in the report; the run fails only
/// when every image fails.
pub fn augment_dataset(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    library: &[CropAsset],
    config: &AugmentConfig,
    output_dir: &Path,
) -> Result<AugmentRunReport> {
    config.validate()?;
    if library.is_empty() {
        return Err(CoreError::CropLibrary {
            message: "crop library is empty".into(),
        });
    }
    let resolved = manifest.resolve_entries(manifest_path);

    // Pool of pseudo-box pixel dims across the dataset, manifest
    // order, for images sized without labels of their own.
    let mut size_pool: Vec<(u32, u32)> = Vec::new();
    if config.size_fallback {
        for (entry, r) in manifest.entries.iter().zip(&resolved) {
            let _ = entry;
            if let Some(lp) = &r.label {
                if let Ok(dims) = image_dims(&r.image) {
                    if let Ok(boxes) = load_labels_with_provenance(lp, dims, LabelKind::Pseudo) {
                        for b in boxes.iter().filter(|b| b.kind == LabelKind::Pseudo) {
                            let rect = b.bbox.to_pixel_rect(dims.0, dims.1);
                            size_pool.push((rect.w, rect.h));
                        }
                    }
                }
            }
        }
    }

    let planned: Vec<(usize, std::result::Result<PlannedImage, ImageFailure>)> = manifest
        .entries
        .par_iter()
        .zip(resolved.par_iter())
        .enumerate()
        .map(|(i, (entry, r))| {
            let result = plan_image(
                entry,
                &r.image,
                r.label.as_deref(),
                library,
                config,
                &size_pool,
            )
            .map_err(|e| ImageFailure {
                image: entry.image.clone(),
                message: e.to_string(),
            });
            (i, result)
        })
        .collect();

    std::fs::create_dir_all(output_dir).map_err(|e| CoreError::io(output_dir, e))?;
    let records_path = output_dir.join("augment.mca.jsonl");
    let mut records_file = std::io::BufWriter::new(
        std::fs::File::create(&records_path).map_err(|e| CoreError::io(&records_path, e))?,
    );
    let mut out_manifest = DatasetManifest::new(".", manifest.split, Domain::TargetAugmented);
    let mut report = AugmentRunReport {
        images: manifest.entries.len(),
        augmented: 0,
        passed_through: 0,
        pastes_placed: 0,
        pastes_skipped: 0,
        poisson_fallbacks: 0,
        failures: Vec::new(),
        output_manifest: String::new(),
        records_file: records_path.to_string_lossy().into_owned(),
    };

    let mut ordered = planned;
    ordered.sort_by_key(|(i, _)| *i);
    for (_, item) in ordered {
        let plan = match item {
            Ok(p) => p,
            Err(f) => {
                report.failures.push(f);
                continue;
            }
        };
        let image_out = output_dir.join(&plan.rel_image);
        if let Some(parent) = image_out.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
        }
        match &plan.action {
            OutputAction::CopyImage(src) => {
                std::fs::copy(src, &image_out).map_err(|e| CoreError::io(&image_out, e))?;
                report.passed_through += 1;
            }
            OutputAction::EncodeImage(img) => {
                img.save_png(&image_out)?;
                report.augmented += 1;
            }
        }
        if let (Some(labels), Some(rel_label)) = (&plan.labels, &plan.rel_label) {
            let label_out = output_dir.join(rel_label);
            if let Some(parent) = label_out.parent() {
                std::fs::create_dir_all(parent).map_err(|e| CoreError::io(parent, e))?;
            }
            save_labels(labels, &label_out)?;
        }
        report.pastes_placed += plan.record.pastes.len();
        report.pastes_skipped += plan.record.skips.len();
        report.poisson_fallbacks += plan
            .record
            .pastes
            .iter()
            .filter(|p| p.poisson_fallback)
            .count();
        let line = serde_json::to_string(&plan.record).map_err(|e| CoreError::Json {
            path: records_path.clone(),
            message: e.to_string(),
        })?;
        writeln!(records_file, "{line}").map_err(|e| CoreError::io(&records_path, e))?;
        out_manifest.entries.push(ManifestEntry {
            image: plan.rel_image,
            label: plan.rel_label,
            domain: None,
        });
    }
    records_file.flush().map_err(|e| CoreError::io(&records_path, e))?;

    if !manifest.entries.is_empty() && report.failures.len() == manifest.entries.len() {
        return Err(CoreError::Manifest {
            path: manifest_path.to_path_buf(),
            message: format!(
                "augmentation failed for every image; first: {}",
                report.failures[0].message
            ),
        });
    }
    let manifest_out = output_dir.join("manifest.json");
    out_manifest.save(&manifest_out)?;
    report.output_manifest = manifest_out.to_string_lossy().into_owned();
    Ok(report)
}
