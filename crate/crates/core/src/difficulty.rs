//! Difficulty scoring of labeled targets against their local
//! background, and the four-way classification built on it.
//!
//! Each box gets three measurements on the grayscale image: its pixel
//! area, the contrast between target and surrounding background, and
//! the background's own variability. A fixed threshold cascade then
//! assigns one of four categories, checked in order: small target, low
//! contrast, simple background, complex background.

use crate::annotations::{BBox, PixelRect};
use crate::error::CoreError;
use crate::imaging::RasterImage;
use crate::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Category order mirrors the evaluation cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DifficultyCategory {
    SmallTarget,
    LowContrast,
    SimpleExample,
    ComplexBackground,
}

impl DifficultyCategory {
    pub const ALL: [DifficultyCategory; 4] = [
        DifficultyCategory::SmallTarget,
        DifficultyCategory::LowContrast,
        DifficultyCategory::SimpleExample,
        DifficultyCategory::ComplexBackground,
    ];
}

/// The three per-box measurements.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DifficultyMetrics {
    /// Target pixel area: height times width of the converted rect.
    pub target_size: f64,
    /// RMS deviation of background pixels from the mean target
    /// intensity.
    pub local_contrast: f64,
    /// RMS deviation of background pixels from their own mean.
    pub background_complexity: f64,
    /// Background pixels actually available after clipping.
    pub background_pixels: u64,
}

/// Cascade thresholds plus the background expansion factor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DifficultyThresholds {
    /// Area bound in squared pixels (a 16x16 target sits exactly on it).
    pub target_size: f64,
    pub local_contrast: f64,
    pub background_complexity: f64,
    /// Background rectangle edge scale relative to the target box.
    pub expansion_factor: f64,
}

impl Default for DifficultyThresholds {
    fn default() -> Self {
        DifficultyThresholds {
            target_size: 256.0,
            local_contrast: 10.0,
            background_complexity: 10.0,
            expansion_factor: 1.5,
        }
    }
}

impl DifficultyThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("target_size", self.target_size),
            ("local_contrast", self.local_contrast),
            ("background_complexity", self.background_complexity),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(CoreError::InvalidParameter {
                    message: format!("{name} threshold must be finite and non-negative, got {v}"),
                });
            }
        }
        if !self.expansion_factor.is_finite() || self.expansion_factor <= 1.0 {
            return Err(CoreError::InvalidParameter {
                message: format!(
                    "expansion factor must exceed 1, got {}",
                    self.expansion_factor
                ),
            });
        }
        Ok(())
    }
}

/// The background rectangle for a target box: dimensions scaled by the
/// expansion factor (rounded half-up), centered on the target rect's
/// center, then nudged so it always contains the target rect.
///
/// Returns `(inner, outer)` in unclipped pixel coordinates.
pub fn background_region(
    bbox: &BBox,
    img_w: u32,
    img_h: u32,
    expansion_factor: f64,
) -> (PixelRect, PixelRect) {
    let inner = bbox.to_pixel_rect(img_w, img_h);
    let ow = (crate::util::round_half_up(expansion_factor * inner.w as f64) as i64).max(1) as u32;
    let oh = (crate::util::round_half_up(expansion_factor * inner.h as f64) as i64).max(1) as u32;
    let cx = inner.x as f64 + inner.w as f64 / 2.0;
    let cy = inner.y as f64 + inner.h as f64 / 2.0;
    let mut ox = crate::util::round_half_up(cx - ow as f64 / 2.0) as i64;
    let mut oy = crate::util::round_half_up(cy - oh as f64 / 2.0) as i64;
    // Containment guard: rounding may not leave the outer rect around
    // the inner one when sizes are tiny.
    ox = ox.min(inner.x);
    oy = oy.min(inner.y);
    let ox_end = (ox + ow as i64).max(inner.x_end());
    let oy_end = (oy + oh as i64).max(inner.y_end());
    let outer = PixelRect {
        x: ox,
        y: oy,
        w: (ox_end - ox) as u32,
        h: (oy_end - oy) as u32,
    };
    (inner, outer)
}

fn mean_over(gray: &RasterImage, rect: &PixelRect) -> (f64, u64) {
    let mut sum = 0.0;
    let mut count = 0u64;
    for y in rect.y..rect.y_end() {
        for x in rect.x..rect.x_end() {
            sum += gray.get(x as u32, y as u32, 0) as f64;
            count += 1;
        }
    }
    (if count > 0 { sum / count as f64 } else { 0.0 }, count)
}

/// Computes the three measurements for one box on a grayscale image.
///
/// The target area uses the converted rect's own dimensions; contrast
/// and complexity run over the clipped background (outer minus inner).
/// A box whose clipped footprint is empty is a degenerate-box error;
/// zero background pixels yield zero contrast and complexity.
pub fn compute_metrics(
    gray: &RasterImage,
    bbox: &BBox,
    thresholds: &DifficultyThresholds,
) -> Result<DifficultyMetrics> {
    if gray.channels != 1 {
        return Err(CoreError::InvalidParameter {
            message: "difficulty metrics require a grayscale image".into(),
        });
    }
    thresholds.validate()?;
    let (inner, outer) = background_region(bbox, gray.width, gray.height, thresholds.expansion_factor);
    let inner_clipped = inner.clipped_to(gray.width, gray.height).ok_or_else(|| {
        CoreError::DegenerateBox {
            message: format!(
                "box ({:.4}, {:.4}, {:.4}, {:.4}) has no pixels inside the {}x{} image",
                bbox.cx, bbox.cy, bbox.w, bbox.h, gray.width, gray.height
            ),
        }
    })?;
    let target_size = inner.area() as f64;

    let (target_mean, _) = mean_over(gray, &inner_clipped);

    // Background pixels: clipped outer rect minus clipped inner rect.
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut contrast_sq = 0.0;
    let mut count = 0u64;
    if let Some(outer_clipped) = outer.clipped_to(gray.width, gray.height) {
        for y in outer_clipped.y..outer_clipped.y_end() {
            for x in outer_clipped.x..outer_clipped.x_end() {
                let in_target = x >= inner_clipped.x
                    && x < inner_clipped.x_end()
                    && y >= inner_clipped.y
                    && y < inner_clipped.y_end();
                if in_target {
                    continue;
                }
                let v = gray.get(x as u32, y as u32, 0) as f64;
                sum += v;
                sum_sq += v * v;
                let d = v - target_mean;
                contrast_sq += d * d;
                count += 1;
            }
        }
    }
    let (local_contrast, background_complexity) = if count == 0 {
        (0.0, 0.0)
    } else {
        let n = count as f64;
        let bg_mean = sum / n;
        let variance = (sum_sq / n - bg_mean * bg_mean).max(0.0);
        ((contrast_sq / n).sqrt(), variance.sqrt())
    };
    Ok(DifficultyMetrics {
        target_size,
        local_contrast,
        background_complexity,
        background_pixels: count,
    })
}

/// The threshold cascade. Exactly one category for any metrics value;
/// every comparison is inclusive on the threshold itself.
pub fn classify(metrics: &DifficultyMetrics, thresholds: &DifficultyThresholds) -> DifficultyCategory {
    if metrics.target_size <= thresholds.target_size {
        DifficultyCategory::SmallTarget
    } else if metrics.local_contrast <= thresholds.local_contrast {
        DifficultyCategory::LowContrast
    } else if metrics.background_complexity <= thresholds.background_complexity {
        DifficultyCategory::SimpleExample
    } else {
        DifficultyCategory::ComplexBackground
    }
}

/// One scored box inside a partition report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredBox {
    pub box_index: usize,
    pub target_size: f64,
    pub local_contrast: f64,
    pub background_complexity: f64,
    pub category: DifficultyCategory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImagePartition {
    pub image: String,
    pub boxes: Vec<ScoredBox>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionIssue {
    pub image: String,
    pub message: String,
}

/// Difficulty partition of a whole dataset's boxes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionReport {
    pub thresholds: DifficultyThresholds,
    pub images: Vec<ImagePartition>,
    pub counts: std::collections::BTreeMap<String, usize>,
    pub errors: Vec<PartitionIssue>,
}

pub fn category_key(c: DifficultyCategory) -> String {
    serde_json::to_value(c)
        .expect("category serializes")
        .as_str()
        .expect("category is a string")
        .to_string()
}

/// Scores every box of every listed image.
///
/// `boxes` pairs each image key with the boxes to score (callers pass
/// ground-truth or pseudo boxes as appropriate). Images are processed
/// in parallel; output order follows the input order. `pre_resize`
/// rescales each image before measuring, for pipelines that score at
/// the detector's input resolution.
pub fn partition_dataset(
    images: &[(String, std::path::PathBuf)],
    boxes: &std::collections::BTreeMap<String, Vec<BBox>>,
    thresholds: &DifficultyThresholds,
    pre_resize: Option<(u32, u32)>,
) -> Result<PartitionReport> {
    thresholds.validate()?;
    let outcomes: Vec<(Option<ImagePartition>, Option<PartitionIssue>)> = images
        .par_iter()
        .map(|(key, path)| {
            let empty = Vec::new();
            let image_boxes = boxes.get(key).unwrap_or(&empty);
            let gray = match crate::imaging::load_image(path) {
                Ok(img) => {
                    let g = img.to_grayscale();
                    match pre_resize {
                        Some((w, h)) => match g.resize_bilinear(w, h) {
                            Ok(r) => r,
                            Err(e) => {
                                return (
                                    None,
                                    Some(PartitionIssue {
                                        image: key.clone(),
                                        message: e.to_string(),
                                    }),
                                )
                            }
                        },
                        None => g,
                    }
                }
                Err(e) => {
                    return (
                        None,
                        Some(PartitionIssue {
                            image: key.clone(),
                            message: e.to_string(),
                        }),
                    )
                }
            };
            let mut scored = Vec::with_capacity(image_boxes.len());
            for (i, b) in image_boxes.iter().enumerate() {
                match compute_metrics(&gray, b, thresholds) {
                    Ok(m) => scored.push(ScoredBox {
                        box_index: i,
                        target_size: m.target_size,
                        local_contrast: m.local_contrast,
                        background_complexity: m.background_complexity,
                        category: classify(&m, thresholds),
                    }),
                    Err(e) => {
                        return (
                            None,
                            Some(PartitionIssue {
                                image: key.clone(),
                                message: format!("box {i}: {e}"),
                            }),
                        )
                    }
                }
            }
            (
                Some(ImagePartition {
                    image: key.clone(),
                    boxes: scored,
                }),
                None,
            )
        })
        .collect();

    let mut report = PartitionReport {
        thresholds: *thresholds,
        images: Vec::new(),
        counts: DifficultyCategory::ALL
            .iter()
            .map(|&c| (category_key(c), 0usize))
            .collect(),
        errors: Vec::new(),
    };
    for (partition, issue) in outcomes {
        if let Some(p) = partition {
            for s in &p.boxes {
                *report.counts.get_mut(&category_key(s.category)).expect("all keys present") += 1;
            }
            report.images.push(p);
        }
        if let Some(i) = issue {
            report.errors.push(i);
        }
    }
    Ok(report)
}
