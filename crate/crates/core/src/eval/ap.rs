//! Average precision at a fixed IoU threshold for a single category.
//!
//! Detections across the dataset are pooled, sorted by descending
//! confidence (ties by image path, then box index), and matched
//! greedily: each detection takes the highest-IoU unmatched ground
//! truth of its image when that IoU reaches the threshold, otherwise
//! it is a false positive. The precision/recall curve has one point
//! per distinct confidence value; area integration follows the
//! monotone precision envelope (all-point) or the 11-point mean.

use crate::annotations::{load_labels, BBox, DatasetManifest, LabelKind, LabeledBox};
use crate::error::CoreError;
use crate::imaging::image_dims;
use crate::util::format1;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegrationMode {
    AllPoint,
    ElevenPoint,
}

/// One detection pooled into the evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image: String,
    pub box_index: usize,
    pub bbox: BBox,
    pub confidence: f64,
}

impl Detection {
    /// Converts a labeled box; boxes without a confidence are not
    /// detections and are rejected.
    pub fn from_labeled(image: &str, box_index: usize, lb: &LabeledBox) -> Result<Detection> {
        let confidence = lb.confidence.ok_or_else(|| CoreError::EvalInput {
            message: format!("{image}: box {box_index} has no confidence"),
        })?;
        Ok(Detection {
            image: image.to_string(),
            box_index,
            bbox: lb.bbox,
            confidence,
        })
    }
}

/// Point on the precision/recall curve at one confidence threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub precision: f64,
    pub recall: f64,
}

/// One detection's matching outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchRecord {
    pub image: String,
    pub box_index: usize,
    pub confidence: f64,
    /// Matched ground-truth index within the image, `None` for FP.
    pub gt_index: Option<usize>,
    pub iou: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApResult {
    pub ap: f64,
    pub mode: IntegrationMode,
    pub iou_threshold: f64,
    pub total_gt: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub curve: Vec<PrPoint>,
    pub matches: Vec<MatchRecord>,
}

/// Computes single-category AP.
///
/// Degenerate datasets are defined as: no ground truth and no
/// detections is a perfect (vacuous) result with AP 1; no ground truth
/// but some detections scores 0.
pub fn average_precision(
    ground_truth: &BTreeMap<String, Vec<BBox>>,
    detections: &[Detection],
    iou_threshold: f64,
    mode: IntegrationMode,
) -> Result<ApResult> {
    if !(0.0..=1.0).contains(&iou_threshold) || !iou_threshold.is_finite() {
        return Err(CoreError::InvalidParameter {
            message: format!("iou threshold {iou_threshold} outside [0, 1]"),
        });
    }
    for d in detections {
        if !d.confidence.is_finite() || !(0.0..=1.0).contains(&d.confidence) {
            return Err(CoreError::EvalInput {
                message: format!(
                    "{}: box {} confidence {} outside [0, 1]",
                    d.image, d.box_index, d.confidence
                ),
            });
        }
    }
    let total_gt: usize = ground_truth.values().map(Vec::len).sum();

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let da = &detections[a];
        let db = &detections[b];
        db.confidence
            .partial_cmp(&da.confidence)
            .expect("confidences are finite")
            .then_with(|| da.image.cmp(&db.image))
            .then_with(|| da.box_index.cmp(&db.box_index))
    });

    let mut matched: BTreeMap<&str, Vec<bool>> = ground_truth
        .iter()
        .map(|(k, v)| (k.as_str(), vec![false; v.len()]))
        .collect();

    // Outcome per detection in sorted order: true for TP.
    let mut outcomes: Vec<(usize, bool)> = Vec::with_capacity(order.len());
    let mut matches = Vec::with_capacity(order.len());
    for &i in &order {
        let det = &detections[i];
        let mut best: Option<(usize, f64)> = None;
        if let Some(gts) = ground_truth.get(&det.image) {
            let flags = matched.get_mut(det.image.as_str()).expect("same keys");
            for (gi, gt) in gts.iter().enumerate() {
                if flags[gi] {
                    continue;
                }
                let iou = det.bbox.iou(gt);
                // Strictly-greater keeps the lowest index on ties.
                let better = match best {
                    None => true,
                    Some((_, bi)) => iou > bi,
                };
                if better {
                    best = Some((gi, iou));
                }
            }
            if let Some((gi, iou)) = best {
                if iou >= iou_threshold {
                    flags[gi] = true;
                    outcomes.push((i, true));
                    matches.push(MatchRecord {
                        image: det.image.clone(),
                        box_index: det.box_index,
                        confidence: det.confidence,
                        gt_index: Some(gi),
                        iou,
                    });
                    continue;
                }
            }
        }
        outcomes.push((i, false));
        matches.push(MatchRecord {
            image: det.image.clone(),
            box_index: det.box_index,
            confidence: det.confidence,
            gt_index: None,
            iou: best.map(|(_, v)| v).unwrap_or(0.0),
        });
    }

    // One PR point per distinct confidence: all tied detections enter
    // together.
    let mut curve: Vec<PrPoint> = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut idx = 0usize;
    while idx < outcomes.len() {
        let threshold = detections[outcomes[idx].0].confidence;
        while idx < outcomes.len() && detections[outcomes[idx].0].confidence == threshold {
            if outcomes[idx].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            idx += 1;
        }
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if total_gt == 0 {
            0.0
        } else {
            tp as f64 / total_gt as f64
        };
        curve.push(PrPoint {
            threshold,
            tp,
            fp,
            fn_count: total_gt - tp,
            precision,
            recall,
        });
    }

    let ap = integrate(&curve, total_gt, detections.len(), mode);
    Ok(ApResult {
        ap,
        mode,
        iou_threshold,
        total_gt,
        tp,
        fp,
        fn_count: total_gt - tp,
        curve,
        matches,
    })
}

fn integrate(
    curve: &[PrPoint],
    total_gt: usize,
    total_detections: usize,
    mode: IntegrationMode,
) -> f64 {
    if total_gt == 0 {
        // Vacuously perfect with nothing predicted; otherwise pure FP.
        return if total_detections == 0 { 1.0 } else { 0.0 };
    }
    match mode {
        IntegrationMode::AllPoint => {
            // Area under the monotone precision envelope: each point
            // contributes its recall step times the max precision at
            // or beyond it.
            let mut env_from_right = vec![0.0f64; curve.len()];
            let mut run = 0.0f64;
            for (i, p) in curve.iter().enumerate().rev() {
                run = run.max(p.precision);
                env_from_right[i] = run;
            }
            let mut area = 0.0;
            let mut prev_recall = 0.0;
            for (i, p) in curve.iter().enumerate() {
                area += (p.recall - prev_recall) * env_from_right[i];
                prev_recall = p.recall;
            }
            area
        }
        IntegrationMode::ElevenPoint => {
            let mut sum = 0.0;
            for k in 0..=10 {
                let r = k as f64 / 10.0;
                let max_p = curve
                    .iter()
                    .filter(|p| p.recall >= r - 1e-12)
                    .map(|p| p.precision)
                    .fold(0.0f64, f64::max);
                sum += max_p;
            }
            sum / 11.0
        }
    }
}

/// Per-image bookkeeping inside a [`Map50Report`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerImageEval {
    pub image: String,
    pub gt_count: usize,
    pub detection_count: usize,
    pub prediction_file_missing: bool,
}

/// Dataset-level evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Map50Report {
    /// mAP as a percentage at full precision.
    pub map: f64,
    /// Display form, rounded half-up to one decimal.
    pub map_display: String,
    pub ap: f64,
    pub mode: IntegrationMode,
    pub iou_threshold: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub missing_prediction_files: usize,
    pub pr_curve: Vec<PrPoint>,
    pub per_image: Vec<PerImageEval>,
}

/// Evaluates prediction files against a ground-truth manifest at IoU
/// 0.5. Predictions align to images by basename: image `x/foo.png`
/// reads `<predictions_dir>/foo.txt`; a missing file counts as zero
/// detections and is tallied in the report.
pub fn map50(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    predictions_dir: &Path,
    mode: IntegrationMode,
) -> Result<Map50Report> {
    let entries = manifest.resolve_entries(manifest_path);
    let mut ground_truth: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
    let mut detections: Vec<Detection> = Vec::new();
    let mut per_image = Vec::with_capacity(entries.len());
    let mut missing = 0usize;

    for e in &entries {
        let dims = image_dims(&e.image)?;
        let gts = match &e.label {
            Some(label) => load_labels(label, dims, LabelKind::GroundTruth)?
                .into_iter()
                .map(|b| b.bbox)
                .collect(),
            None => Vec::new(),
        };
        let stem = Path::new(&e.key)
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CoreError::EvalInput {
                message: format!("image key {:?} has no usable basename", e.key),
            })?
            .to_string();
        let pred_path = predictions_dir.join(format!("{stem}.txt"));
        let mut det_count = 0usize;
        let file_missing = !pred_path.exists();
        if file_missing {
            missing += 1;
        } else {
            let boxes = load_labels(&pred_path, dims, LabelKind::Pseudo)?;
            for (i, lb) in boxes.iter().enumerate() {
                detections.push(Detection::from_labeled(&e.key, i, lb)?);
                det_count += 1;
            }
        }
        ground_truth.insert(e.key.clone(), gts);
        per_image.push(PerImageEval {
            image: e.key.clone(),
            gt_count: ground_truth[&e.key].len(),
            detection_count: det_count,
            prediction_file_missing: file_missing,
        });
    }

    let result = average_precision(&ground_truth, &detections, 0.5, mode)?;
    Ok(Map50Report {
        map: result.ap * 100.0,
        map_display: format1(result.ap * 100.0),
        ap: result.ap,
        mode,
        iou_threshold: 0.5,
        tp: result.tp,
        fp: result.fp,
        fn_count: result.fn_count,
        missing_prediction_files: missing,
        pr_curve: result.curve,
        per_image,
    })
}
