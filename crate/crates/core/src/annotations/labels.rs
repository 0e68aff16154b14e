//! Plain-text label files and their provenance sidecars.
//!
//! One line per box: `category cx cy w h` for ground truth and pasted
//! objects, `category cx cy w h confidence` for detector predictions.
//! All five geometry fields are normalized and written with six
//! decimals. A sidecar `<stem>.prov.json` records each line's kind so
//! pasted objects stay distinguishable from real ground truth while the
//! label file itself remains consumable by any standard trainer.

use crate::annotations::BBox;
use crate::error::CoreError;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// How a labeled box came to exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelKind {
    /// Human-annotated truth.
    GroundTruth,
    /// Detector prediction carried into training; has a confidence.
    Pseudo,
    /// Object pasted by augmentation; trusted like ground truth but
    /// tracked separately so trainers can weight it.
    PastedTrue,
}

/// A box plus its category, provenance kind, and (for predictions)
/// confidence.
///
/// Invariant: `kind == Pseudo` implies `confidence` is `Some` value in
/// [0, 1]; the other kinds carry `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub category: u32,
    pub bbox: BBox,
    pub kind: LabelKind,
    pub confidence: Option<f64>,
}

impl LabeledBox {
    pub fn ground_truth(bbox: BBox) -> Self {
        LabeledBox {
            category: 0,
            bbox,
            kind: LabelKind::GroundTruth,
            confidence: None,
        }
    }

    pub fn pasted_true(bbox: BBox) -> Self {
        LabeledBox {
            category: 0,
            bbox,
            kind: LabelKind::PastedTrue,
            confidence: None,
        }
    }

    pub fn pseudo(bbox: BBox, confidence: f64) -> Result<Self> {
        if !confidence.is_finite() || !(0.0..=1.0).contains(&confidence) {
            return Err(CoreError::InvalidBox {
                message: format!("confidence {confidence} outside [0, 1]"),
            });
        }
        Ok(LabeledBox {
            category: 0,
            bbox,
            kind: LabelKind::Pseudo,
            confidence: Some(confidence),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProvenanceEntry {
    kind: LabelKind,
}

/// Sidecar path for a label file: extension replaced with `prov.json`.
pub fn provenance_path(label_path: &Path) -> PathBuf {
    label_path.with_extension("prov.json")
}

fn parse_field(
    token: &str,
    name: &str,
    path: &Path,
    line_num: usize,
) -> Result<f64> {
    token.parse::<f64>().map_err(|_| CoreError::LabelParse {
        path: path.to_path_buf(),
        line: line_num,
        message: format!("{name} is not a number: {token:?}"),
    })
}

fn parse_line(
    line: &str,
    path: &Path,
    line_num: usize,
    kind_default: LabelKind,
) -> Result<Option<LabeledBox>> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    let tokens: Vec<&str> = trimmed.split_whitespace().collect();
    if tokens.len() != 5 && tokens.len() != 6 {
        return Err(CoreError::LabelParse {
            path: path.to_path_buf(),
            line: line_num,
            message: format!("expected 5 or 6 fields, found {}", tokens.len()),
        });
    }
    let category: u32 = tokens[0].parse().map_err(|_| CoreError::LabelParse {
        path: path.to_path_buf(),
        line: line_num,
        message: format!("category is not a non-negative integer: {:?}", tokens[0]),
    })?;
    if category != 0 {
        return Err(CoreError::LabelParse {
            path: path.to_path_buf(),
            line: line_num,
            message: format!("category must be 0 in this single-category format, found {category}"),
        });
    }
    let cx = parse_field(tokens[1], "cx", path, line_num)?;
    let cy = parse_field(tokens[2], "cy", path, line_num)?;
    let w = parse_field(tokens[3], "w", path, line_num)?;
    let h = parse_field(tokens[4], "h", path, line_num)?;
    let bbox = BBox::new(cx, cy, w, h).map_err(|e| CoreError::LabelParse {
        path: path.to_path_buf(),
        line: line_num,
        message: e.to_string(),
    })?;
    if tokens.len() == 6 {
        let conf = parse_field(tokens[5], "confidence", path, line_num)?;
        let lb = LabeledBox::pseudo(bbox, conf).map_err(|e| CoreError::LabelParse {
            path: path.to_path_buf(),
            line: line_num,
            message: e.to_string(),
        })?;
        Ok(Some(lb))
    } else {
        Ok(Some(LabeledBox {
            category,
            bbox,
            kind: kind_default,
            confidence: None,
        }))
    }
}

/// Reads a label file.
///
/// Blank lines are skipped. Six-field lines become `Pseudo` boxes;
/// five-field lines take `kind_default`. `image_dims` is the pixel size
/// of the image the labels describe; each box must keep a nonempty
/// pixel footprint when clipped to it.
pub fn load_labels(
    path: &Path,
    image_dims: (u32, u32),
    kind_default: LabelKind,
) -> Result<Vec<LabeledBox>> {
    let content = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if let Some(lb) = parse_line(line, path, idx + 1, kind_default)? {
            let rect = lb.bbox.to_pixel_rect(image_dims.0, image_dims.1);
            if rect.clipped_to(image_dims.0, image_dims.1).is_none() {
                return Err(CoreError::LabelParse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: format!(
                        "box lies entirely outside a {}x{} image",
                        image_dims.0, image_dims.1
                    ),
                });
            }
            out.push(lb);
        }
    }
    Ok(out)
}

/// Reads a label file and, when a provenance sidecar exists, restores
/// each line's recorded kind (so pasted objects round-trip).
pub fn load_labels_with_provenance(
    path: &Path,
    image_dims: (u32, u32),
    kind_default: LabelKind,
) -> Result<Vec<LabeledBox>> {
    let mut boxes = load_labels(path, image_dims, kind_default)?;
    let prov = provenance_path(path);
    if prov.exists() {
        let content = std::fs::read_to_string(&prov).map_err(|e| CoreError::io(&prov, e))?;
        let map: BTreeMap<usize, ProvenanceEntry> =
            serde_json::from_str(&content).map_err(|e| CoreError::Json {
                path: prov.clone(),
                message: e.to_string(),
            })?;
        for (idx, entry) in map {
            if let Some(b) = boxes.get_mut(idx) {
                // Confidence-bearing lines stay pseudo regardless of
                // sidecar drift; five-field lines take the recorded kind.
                if b.confidence.is_none() && entry.kind != LabelKind::Pseudo {
                    b.kind = entry.kind;
                }
            }
        }
    }
    Ok(boxes)
}

/// Writes a label file plus its provenance sidecar.
///
/// Pseudo boxes serialize with their confidence as a sixth field;
/// ground-truth and pasted boxes serialize with five fields. Fields use
/// six decimals. The sidecar maps line index to the box kind.
pub fn save_labels(boxes: &[LabeledBox], path: &Path) -> Result<()> {
    let mut text = String::new();
    let mut prov: BTreeMap<usize, ProvenanceEntry> = BTreeMap::new();
    for (idx, b) in boxes.iter().enumerate() {
        if b.kind == LabelKind::Pseudo && b.confidence.is_none() {
            return Err(CoreError::InvalidBox {
                message: format!("pseudo box at index {idx} has no confidence"),
            });
        }
        match b.confidence {
            Some(conf) => writeln!(
                text,
                "{} {:.6} {:.6} {:.6} {:.6} {:.6}",
                b.category, b.bbox.cx, b.bbox.cy, b.bbox.w, b.bbox.h, conf
            ),
            None => writeln!(
                text,
                "{} {:.6} {:.6} {:.6} {:.6}",
                b.category, b.bbox.cx, b.bbox.cy, b.bbox.w, b.bbox.h
            ),
        }
        .expect("writing to String cannot fail");
        prov.insert(idx, ProvenanceEntry { kind: b.kind });
    }
    std::fs::write(path, text).map_err(|e| CoreError::io(path, e))?;
    let prov_path = provenance_path(path);
    let json = serde_json::to_string_pretty(&prov).expect("provenance map serializes");
    std::fs::write(&prov_path, json).map_err(|e| CoreError::io(&prov_path, e))?;
    Ok(())
}
