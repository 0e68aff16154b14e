//! Stub detector and trainer speaking the adapter protocol.
//!
//! The stub detector reads the ground-truth labels next to each image
//! and corrupts them in a quality-controlled way: boxes are dropped,
//! centers jittered, confidences squeezed toward the floor, and false
//! positives injected, all scaled by `1 - quality`. Per-box random
//! draws are keyed by image file name and box index only, so two runs
//! in different directories produce identical predictions, and the
//! draws are made before quality scaling, so a better model keeps a
//! superset of the boxes a worse one kept and scores each kept box
//! higher. The stub trainer raises quality toward a ceiling, faster
//! when more of its training boxes are trusted (real or pasted) rather
//! than pseudo, and slower when all but normalization layers are
//! frozen.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use nsn_core::annotations::{
    load_labels, load_labels_with_provenance, save_labels, BBox, DatasetManifest, LabelKind,
    LabeledBox,
};
use nsn_core::imaging::image_dims;
use nsn_core::util::keyed_rng;

use crate::adapter::{train_result_path, InferRequest, TrainRequest, TrainResult};
use crate::error::PipelineError;
use crate::Result;

/// Corruption strengths at quality zero; all shrink linearly as
/// quality approaches one.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectCorruption {
    /// Probability of dropping a true box.
    pub drop_rate: f64,
    /// Center jitter bound in pixels.
    pub jitter_px: f64,
    /// Expected false positives per image.
    pub fp_rate: f64,
    /// Confidence band for kept true boxes before quality lift.
    pub conf_floor: f64,
    pub conf_ceil: f64,
}

impl Default for DetectCorruption {
    fn default() -> Self {
        DetectCorruption {
            drop_rate: 0.4,
            jitter_px: 2.0,
            fp_rate: 1.0,
            conf_floor: 0.3,
            conf_ceil: 0.95,
        }
    }
}

/// How training moves quality.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnSpec {
    /// Gain fraction applied regardless of label mix.
    pub rate_base: f64,
    /// Extra gain fraction scaled by the trusted-label share.
    pub rate_true: f64,
    /// Quality ceiling, strictly below one.
    pub quality_max: f64,
    /// Gain multiplier when all but normalization layers are frozen.
    pub freeze_damp: f64,
}

impl Default for LearnSpec {
    fn default() -> Self {
        LearnSpec {
            rate_base: 0.2,
            rate_true: 0.4,
            quality_max: 0.98,
            freeze_damp: 0.6,
        }
    }
}

/// Serializable stand-in for a detector checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubModel {
    /// Detection quality in [0, quality_max].
    pub quality: f64,
    pub seed: u64,
    #[serde(default)]
    pub corruption: DetectCorruption,
    #[serde(default)]
    pub learn: LearnSpec,
}

impl StubModel {
    pub fn new(quality: f64, seed: u64) -> Self {
        StubModel {
            quality,
            seed,
            corruption: DetectCorruption::default(),
            learn: LearnSpec::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| PipelineError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(path, text.as_bytes()).map_err(|e| PipelineError::io(path, e))
    }
}

fn clamp_center(c: f64, half: f64) -> f64 {
    if half >= 0.5 {
        return c.clamp(0.0, 1.0);
    }
    c.clamp(half, 1.0 - half)
}

/// Predicts boxes for one image from the ground truth beside it.
pub fn infer_one(model: &StubModel, image: &Path) -> Result<Vec<LabeledBox>> {
    let dims = image_dims(image)?;
    let filename = image
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let q = model.quality;
    let cor = &model.corruption;
    let mut out = Vec::new();

    let label_path = image.with_extension("txt");
    let truth = if label_path.is_file() {
        load_labels(&label_path, dims, LabelKind::GroundTruth)?
    } else {
        Vec::new()
    };
    for (i, b) in truth.iter().enumerate() {
        let mut rng = keyed_rng(model.seed, &format!("{filename}#{i}"));
        let u: f64 = rng.gen();
        let v: f64 = rng.gen();
        let dx: f64 = rng.gen_range(-1.0..=1.0);
        let dy: f64 = rng.gen_range(-1.0..=1.0);
        if u < cor.drop_rate * (1.0 - q) {
            continue;
        }
        let cx = clamp_center(
            b.bbox.cx + dx * cor.jitter_px * (1.0 - q) / dims.0 as f64,
            b.bbox.w / 2.0,
        );
        let cy = clamp_center(
            b.bbox.cy + dy * cor.jitter_px * (1.0 - q) / dims.1 as f64,
            b.bbox.h / 2.0,
        );
        let conf = q + (1.0 - q) * (cor.conf_floor + v * (cor.conf_ceil - cor.conf_floor));
        out.push(LabeledBox::pseudo(
            BBox::new(cx, cy, b.bbox.w, b.bbox.h)?,
            conf,
        )?);
    }

    let mut fp_rng = keyed_rng(model.seed, &format!("{filename}#fp"));
    let fp_expected = cor.fp_rate * (1.0 - q);
    let extra: f64 = fp_rng.gen();
    let fp_count = fp_expected.floor() as usize + usize::from(extra < fp_expected.fract());
    for _ in 0..fp_count {
        let w = fp_rng.gen_range(0.02..0.06);
        let h = fp_rng.gen_range(0.02..0.06);
        let cx = fp_rng.gen_range(0.1..0.9);
        let cy = fp_rng.gen_range(0.1..0.9);
        // False alarms stay in a mid confidence band: above the
        // candidate floor, below any acceptance threshold.
        let conf = fp_rng.gen_range(0.26..0.74);
        out.push(LabeledBox::pseudo(BBox::new(cx, cy, w, h)?, conf)?);
    }
    Ok(out)
}

/// Serves one `infer` request: writes `<stem>.txt` predictions for
/// every listed image into the request's output directory.
pub fn serve_infer(request_path: &Path) -> Result<()> {
    let text = fs::read_to_string(request_path).map_err(|e| PipelineError::io(request_path, e))?;
    let request: InferRequest = serde_json::from_str(&text).map_err(|e| PipelineError::Json {
        path: request_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let model = StubModel::load(&request.model)?;
    fs::create_dir_all(&request.output_dir)
        .map_err(|e| PipelineError::io(&request.output_dir, e))?;
    for image in &request.images {
        let boxes = infer_one(&model, image)?;
        let stem = image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| PipelineError::Adapter {
                context: "stub infer".into(),
                message: format!("image path {} has no stem", image.display()),
            })?;
        save_labels(&boxes, &request.output_dir.join(format!("{stem}.txt")))?;
    }
    Ok(())
}

/// Fraction of boxes in the train manifest that are trusted labels
/// (ground truth or pasted) rather than pseudo.
fn trusted_fraction(manifest: &DatasetManifest, manifest_path: &Path) -> Result<f64> {
    let mut trusted = 0usize;
    let mut total = 0usize;
    for entry in manifest.resolve_entries(manifest_path) {
        let Some(label) = entry.label else { continue };
        if !label.is_file() {
            continue;
        }
        let dims = image_dims(&entry.image)?;
        let boxes = load_labels_with_provenance(&label, dims, LabelKind::GroundTruth)?;
        total += boxes.len();
        trusted += boxes
            .iter()
            .filter(|b| b.kind != LabelKind::Pseudo)
            .count();
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(trusted as f64 / total as f64)
}

/// Applies one training period to a model.
pub fn train_update(model: &StubModel, request: &TrainRequest) -> Result<StubModel> {
    let manifest = DatasetManifest::load(&request.train_manifest)?;
    let frac_true = trusted_fraction(&manifest, &request.train_manifest)?;
    let damp = if request.freeze == "except-norm" {
        model.learn.freeze_damp
    } else {
        1.0
    };
    let gain = damp * (model.learn.rate_base + model.learn.rate_true * frac_true);
    let quality = (model.quality + (model.learn.quality_max - model.quality) * gain)
        .min(model.learn.quality_max);
    if !quality.is_finite() {
        return Err(PipelineError::Arithmetic {
            message: format!("stub quality update produced {quality}"),
        });
    }
    Ok(StubModel { quality, ..*model })
}

/// Serves one `train` request: loads the base model, applies the
/// update, writes the output model, and reports it in the result file.
pub fn serve_train(request_path: &Path) -> Result<()> {
    let text = fs::read_to_string(request_path).map_err(|e| PipelineError::io(request_path, e))?;
    let request: TrainRequest = serde_json::from_str(&text).map_err(|e| PipelineError::Json {
        path: request_path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = StubModel::load(&request.base_model)?;
    let updated = train_update(&base, &request)?;
    updated.save(&request.output_model)?;
    let result = TrainResult {
        model: request.output_model.clone(),
    };
    let result_path = train_result_path(request_path);
    let text = serde_json::to_string_pretty(&result).map_err(|e| PipelineError::Json {
        path: result_path.clone(),
        message: e.to_string(),
    })?;
    fs::write(&result_path, text.as_bytes()).map_err(|e| PipelineError::io(&result_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::scene::{generate_domain, BackgroundStyle, SceneSpec, TargetShape};
    use nsn_core::annotations::{Domain, Split};
    use std::path::PathBuf;
    use tempfile::tempdir;

    fn fixture(dir: &Path, seed: u64) -> (PathBuf, DatasetManifest) {
        let spec = SceneSpec {
            width: 96,
            height: 96,
            background: BackgroundStyle::Uniform { level: 60 },
            shapes: vec![TargetShape::Disc],
            count_range: (2, 3),
            size_range: (8, 12),
            intensity_range: (160, 200),
            texture_amp: 35,
            seed,
            emit_masks: false,
        };
        let mp = generate_domain(&spec, 4, dir, Split::Train, Domain::Target).unwrap();
        let m = DatasetManifest::load(&mp).unwrap();
        (mp, m)
    }

    fn predictions(model: &StubModel, mp: &Path, m: &DatasetManifest) -> Vec<Vec<LabeledBox>> {
        m.resolve_entries(mp)
            .iter()
            .map(|e| infer_one(model, &e.image).unwrap())
            .collect()
    }

    #[test]
    fn identical_inputs_give_identical_predictions() {
        let dir = tempdir().unwrap();
        let (mp, m) = fixture(dir.path(), 3);
        let model = StubModel::new(0.3, 17);
        assert_eq!(predictions(&model, &mp, &m), predictions(&model, &mp, &m));
    }

    #[test]
    fn prediction_streams_ignore_the_directory_name() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("first");
        let b = dir.path().join("second-very-different");
        let (mpa, ma) = fixture(&a, 3);
        let (mpb, mb) = fixture(&b, 3);
        let model = StubModel::new(0.4, 17);
        assert_eq!(predictions(&model, &mpa, &ma), predictions(&model, &mpb, &mb));
    }

    #[test]
    fn better_models_keep_a_superset_at_higher_confidence() {
        let dir = tempdir().unwrap();
        let (mp, m) = fixture(dir.path(), 8);
        let low = StubModel::new(0.1, 5);
        let high = StubModel::new(0.7, 5);
        let pl = predictions(&low, &mp, &m);
        let ph = predictions(&high, &mp, &m);
        // Scene objects span at least 8px of 96, injected alarms at
        // most 0.06 normalized, so width separates the two cleanly.
        let trues = |v: &[LabeledBox]| -> Vec<(u64, u64)> {
            v.iter()
                .filter(|b| b.bbox.w > 0.065)
                .map(|b| ((b.bbox.w * 1e9) as u64, (b.bbox.h * 1e9) as u64))
                .collect()
        };
        for (pli, phi) in pl.iter().zip(&ph) {
            let mut pool = trues(phi);
            for item in trues(pli) {
                let pos = pool.iter().position(|x| *x == item);
                assert!(pos.is_some(), "strong model dropped a box the weak model kept");
                pool.remove(pos.unwrap());
            }
        }
        let conf_sum = |ps: &[Vec<LabeledBox>]| -> f64 {
            ps.iter()
                .flatten()
                .map(|b| b.confidence.unwrap())
                .sum::<f64>()
                / ps.iter().map(Vec::len).sum::<usize>().max(1) as f64
        };
        assert!(conf_sum(&ph) > conf_sum(&pl));
    }

    #[test]
    fn near_perfect_quality_reproduces_the_truth() {
        let dir = tempdir().unwrap();
        let (mp, m) = fixture(dir.path(), 21);
        let model = StubModel::new(0.975, 9);
        for e in m.resolve_entries(&mp) {
            let truth = load_labels(
                e.label.as_deref().unwrap(),
                image_dims(&e.image).unwrap(),
                LabelKind::GroundTruth,
            )
            .unwrap();
            let preds = infer_one(&model, &e.image).unwrap();
            let strong: Vec<_> = preds
                .iter()
                .filter(|b| b.confidence.unwrap() > 0.9)
                .collect();
            assert_eq!(strong.len(), truth.len());
            for (p, t) in strong.iter().zip(&truth) {
                assert!((p.bbox.cx - t.bbox.cx).abs() < 0.01);
                assert!((p.bbox.cy - t.bbox.cy).abs() < 0.01);
            }
        }
    }

    #[test]
    fn false_alarms_stay_below_the_acceptance_band() {
        let dir = tempdir().unwrap();
        let (mp, m) = fixture(dir.path(), 4);
        let model = StubModel {
            corruption: DetectCorruption {
                fp_rate: 3.0,
                ..DetectCorruption::default()
            },
            ..StubModel::new(0.0, 2)
        };
        let mut saw_alarm = false;
        for preds in predictions(&model, &mp, &m) {
            for alarm in preds.iter().filter(|b| b.bbox.w < 0.065) {
                saw_alarm = true;
                let c = alarm.confidence.unwrap();
                assert!(c > 0.25 && c < 0.75, "alarm confidence {c}");
            }
        }
        assert!(saw_alarm);
    }

    #[test]
    fn training_raises_quality_and_freezing_damps_it() {
        let dir = tempdir().unwrap();
        let (mp, _m) = fixture(dir.path(), 6);
        let model = StubModel::new(0.3, 1);
        let request = |freeze: &str| TrainRequest {
            base_model: dir.path().join("base.json"),
            train_manifest: mp.clone(),
            label_provenance_dir: mp.parent().unwrap().to_path_buf(),
            freeze: freeze.into(),
            epochs: 30,
            alpha: 1.0,
            beta: 1.0,
            lr: 0.002,
            seed: 1,
            output_model: dir.path().join("out.json"),
        };
        let unfrozen = train_update(&model, &request("none")).unwrap();
        let frozen = train_update(&model, &request("except-norm")).unwrap();
        assert!(unfrozen.quality > model.quality);
        assert!(frozen.quality > model.quality);
        assert!(unfrozen.quality > frozen.quality);
        assert!(unfrozen.quality <= model.learn.quality_max);
    }

    #[test]
    fn request_round_trip_through_the_protocol_files() {
        let dir = tempdir().unwrap();
        let (mp, m) = fixture(dir.path(), 2);
        let model_path = dir.path().join("model.json");
        StubModel::new(0.5, 13).save(&model_path).unwrap();

        let out_dir = dir.path().join("preds");
        let request = InferRequest {
            model: model_path.clone(),
            images: m.resolve_entries(&mp).iter().map(|e| e.image.clone()).collect(),
            output_dir: out_dir.clone(),
        };
        let req_path = dir.path().join("infer.json");
        fs::write(&req_path, serde_json::to_string(&request).unwrap()).unwrap();
        serve_infer(&req_path).unwrap();
        assert!(out_dir.join("img0000.txt").is_file());

        let train_req = TrainRequest {
            base_model: model_path.clone(),
            train_manifest: mp.clone(),
            label_provenance_dir: mp.parent().unwrap().to_path_buf(),
            freeze: "none".into(),
            epochs: 30,
            alpha: 1.0,
            beta: 1.0,
            lr: 0.01,
            seed: 13,
            output_model: dir.path().join("model-out.json"),
        };
        let treq_path = dir.path().join("train.json");
        fs::write(&treq_path, serde_json::to_string(&train_req).unwrap()).unwrap();
        serve_train(&treq_path).unwrap();
        let result: TrainResult = serde_json::from_str(
            &fs::read_to_string(train_result_path(&treq_path)).unwrap(),
        )
        .unwrap();
        let updated = StubModel::load(&result.model).unwrap();
        assert!(updated.quality > 0.5);
    }
}
