//! Whole-dataset validation: every referenced file exists, decodes, and
//! parses, and no image path is listed twice.

use crate::annotations::{load_labels_with_provenance, DatasetManifest, LabelKind};
use crate::imaging::load_image;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// Manifest entry key the issue belongs to, or the manifest itself.
    pub entry: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub images: usize,
    pub boxes: usize,
    pub ground_truth_boxes: usize,
    pub pseudo_boxes: usize,
    pub pasted_boxes: usize,
    pub unlabeled_images: usize,
    pub errors: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Checks every entry of a manifest: images decode, label files parse,
/// and no image path appears twice. Issues never abort the scan; the
/// report lists one error per offence in manifest order.
pub fn validate_dataset(manifest: &DatasetManifest, manifest_path: &Path) -> ValidationReport {
    let entries = manifest.resolve_entries(manifest_path);
    let mut report = ValidationReport::default();

    let mut seen = BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.key.clone()) {
            report.errors.push(ValidationIssue {
                entry: e.key.clone(),
                message: "duplicate image path in manifest".into(),
            });
        }
    }

    struct EntryOutcome {
        counts: (usize, usize, usize, usize),
        unlabeled: bool,
        issues: Vec<ValidationIssue>,
    }

    let outcomes: Vec<EntryOutcome> = entries
        .par_iter()
        .map(|e| {
            let mut issues = Vec::new();
            let mut counts = (0usize, 0usize, 0usize, 0usize);
            let mut unlabeled = false;
            let dims = match load_image(&e.image) {
                Ok(img) => Some((img.width, img.height)),
                Err(err) => {
                    issues.push(ValidationIssue {
                        entry: e.key.clone(),
                        message: err.to_string(),
                    });
                    None
                }
            };
            match (&e.label, dims) {
                (Some(label), Some(dims)) => {
                    match load_labels_with_provenance(label, dims, LabelKind::GroundTruth) {
                        Ok(boxes) => {
                            counts.0 = boxes.len();
                            for b in &boxes {
                                match b.kind {
                                    LabelKind::GroundTruth => counts.1 += 1,
                                    LabelKind::Pseudo => counts.2 += 1,
                                    LabelKind::PastedTrue => counts.3 += 1,
                                }
                            }
                        }
                        Err(err) => issues.push(ValidationIssue {
                            entry: e.key.clone(),
                            message: err.to_string(),
                        }),
                    }
                }
                (Some(label), None) => {
                    // Image failed; still surface a missing label file.
                    if !label.exists() {
                        issues.push(ValidationIssue {
                            entry: e.key.clone(),
                            message: format!("label file not found: {}", label.display()),
                        });
                    }
                }
                (None, _) => unlabeled = true,
            }
            EntryOutcome {
                counts,
                unlabeled,
                issues,
            }
        })
        .collect();

    report.images = entries.len();
    for o in outcomes {
        report.boxes += o.counts.0;
        report.ground_truth_boxes += o.counts.1;
        report.pseudo_boxes += o.counts.2;
        report.pasted_boxes += o.counts.3;
        if o.unlabeled {
            report.unlabeled_images += 1;
        }
        report.errors.extend(o.issues);
    }
    report
}
