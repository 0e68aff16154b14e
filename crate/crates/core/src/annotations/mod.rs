//! Normalized annotations, label files, dataset manifests, and validation.
//!
//! The single source of truth for geometry is the normalized
//! center/size box; integer pixel rectangles exist only as conversions.

mod bbox;
mod labels;
mod manifest;
mod validate;

pub use bbox::{BBox, PixelRect};
pub use labels::{
    load_labels, load_labels_with_provenance, provenance_path, save_labels, LabelKind, LabeledBox,
};
pub use manifest::{DatasetManifest, Domain, ManifestEntry, ResolvedEntry, Split};
pub use validate::{validate_dataset, ValidationIssue, ValidationReport};
