//! Crop library construction: each input image yields one masked
//! object crop, with the mask taken from an external file when one
//! exists and extracted by saliency otherwise.

use crate::annotations::{load_labels, DatasetManifest, LabelKind};
use crate::error::CoreError;
use crate::imaging::{load_image, load_mask, saliency_mask, BinaryMask, RasterImage};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One pasteable object: an RGB crop, its binary mask, and the tight
/// bounding box of the mask within the crop.
#[derive(Debug, Clone)]
pub struct CropAsset {
    /// Manifest key of the originating image.
    pub id: String,
    pub image: RasterImage,
    pub mask: BinaryMask,
    /// (x, y, w, h) of the smallest rectangle containing every mask
    /// pixel, in crop coordinates.
    pub tight_box: (u32, u32, u32, u32),
    pub degraded: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExcludedCrop {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CropLibraryReport {
    pub kept: usize,
    pub excluded: Vec<ExcludedCrop>,
    pub external_masks: usize,
    pub degraded_kept: usize,
}

/// Derives the external mask path for a crop image:
/// `dir/<basename>.mask.png`.
fn external_mask_path(dir: &Path, image: &Path) -> Option<std::path::PathBuf> {
    let stem = image.file_stem()?.to_str()?;
    Some(dir.join(format!("{stem}.mask.png")))
}

fn build_one(
    entry_key: &str,
    image_path: &Path,
    label_path: Option<&Path>,
    external_masks: Option<&Path>,
    allow_degraded: bool,
) -> Result<Option<CropAsset>> {
    let mut image = load_image(image_path)?.to_rgb();
    let full_dims = (image.width, image.height);

    // A ground-truth box, when present, pre-crops the object before
    // mask extraction.
    let pre_crop = match label_path {
        Some(lp) => {
            let boxes = load_labels(lp, full_dims, LabelKind::GroundTruth)?;
            match boxes.first() {
                Some(b) => b
                    .bbox
                    .to_pixel_rect(full_dims.0, full_dims.1)
                    .clipped_to(full_dims.0, full_dims.1),
                None => None,
            }
        }
        None => None,
    };

    let mut external = None;
    if let Some(dir) = external_masks {
        if let Some(mp) = external_mask_path(dir, image_path) {
            if mp.exists() {
                let m = load_mask(&mp)?;
                if (m.width, m.height) != full_dims {
                    return Err(CoreError::InvalidMask {
                        message: format!(
                            "{}: mask is {}x{} but image is {}x{}",
                            mp.display(),
                            m.width,
                            m.height,
                            full_dims.0,
                            full_dims.1
                        ),
                    });
                }
                external = Some(m);
            }
        }
    }

    if let Some(rect) = pre_crop {
        let (x, y) = (rect.x as u32, rect.y as u32);
        image = image.crop(x, y, rect.w, rect.h)?;
        external = match external {
            Some(m) => Some(m.crop(x, y, rect.w, rect.h)?),
            None => None,
        };
    }

    let (mask, degraded) = match external {
        Some(m) => (m, false),
        None => {
            let s = saliency_mask(&image)?;
            (s.mask, s.degraded)
        }
    };

    if degraded && !allow_degraded {
        return Ok(None);
    }
    let tight_box = mask.tight_box().ok_or(CoreError::InvalidMask {
        message: format!("{entry_key}: mask has no object pixels"),
    })?;
    Ok(Some(CropAsset {
        id: entry_key.to_string(),
        image,
        mask,
        tight_box,
        degraded,
    }))
}

/// Builds the paste library from a crop manifest. Per-crop failures
/// and degraded saliency masks exclude the crop and are listed in the
/// report; an empty resulting library is fatal.
pub fn build_crop_library(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    external_masks: Option<&Path>,
    allow_degraded: bool,
) -> Result<(Vec<CropAsset>, CropLibraryReport)> {
    let entries = manifest.resolve_entries(manifest_path);
    let mut assets = Vec::new();
    let mut excluded = Vec::new();
    let mut external_count = 0usize;
    let mut degraded_kept = 0usize;
    for e in &entries {
        let had_external = external_masks
            .and_then(|d| external_mask_path(d, &e.image))
            .map(|p| p.exists())
            .unwrap_or(false);
        match build_one(
            &e.key,
            &e.image,
            e.label.as_deref(),
            external_masks,
            allow_degraded,
        ) {
            Ok(Some(asset)) => {
                if had_external {
                    external_count += 1;
                }
                if asset.degraded {
                    degraded_kept += 1;
                }
                assets.push(asset);
            }
            Ok(None) => excluded.push(ExcludedCrop {
                id: e.key.clone(),
                reason: "saliency mask degraded to fallback".into(),
            }),
            Err(err) => excluded.push(ExcludedCrop {
                id: e.key.clone(),
                reason: err.to_string(),
            }),
        }
    }
    if assets.is_empty() {
        return Err(CoreError::CropLibrary {
            message: format!(
                "no usable crops among {} inputs ({} excluded)",
                entries.len(),
                excluded.len()
            ),
        });
    }
    let report = CropLibraryReport {
        kept: assets.len(),
        excluded,
        external_masks: external_count,
        degraded_kept,
    };
    Ok((assets, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{Domain, ManifestEntry, Split};
    use tempfile::TempDir;

    fn speckle(state: &mut u64, base: u8, amp: u8) -> u8 {
        *state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let n = ((*state >> 33) % (2 * amp as u64 + 1)) as i32 - amp as i32;
        (base as i32 + n).clamp(0, 255) as u8
    }

    fn disc_image(size: u32, bg: u8, fg: u8) -> RasterImage {
        let mut img = RasterImage::new(size, size, 3, bg);
        let c = (size as f64 - 1.0) / 2.0;
        let r = 0.1 * size as f64;
        let mut state = 0x9e3779b97f4a7c15u64;
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 - c;
                let dy = y as f64 - c;
                if (dx * dx + dy * dy).sqrt() <= r {
                    let v = speckle(&mut state, fg, 45);
                    for ch in 0..3 {
                        img.set(x, y, ch, v);
                    }
                }
            }
        }
        img
    }

    fn write_manifest(dir: &Path, names: &[&str]) -> std::path::PathBuf {
        let mut m = DatasetManifest::new(".", Split::Train, Domain::Source);
        for n in names {
            m.entries.push(ManifestEntry {
                image: n.to_string(),
                label: None,
                domain: None,
            });
        }
        let path = dir.join("crops.json");
        m.save(&path).expect("save manifest");
        path
    }

    #[test]
    fn salient_discs_build_clean_assets() {
        let dir = TempDir::new().expect("tempdir");
        for i in 0..3 {
            disc_image(64, 200, 40)
                .save_png(&dir.path().join(format!("c{i}.png")))
                .expect("save");
        }
        let mp = write_manifest(dir.path(), &["c0.png", "c1.png", "c2.png"]);
        let manifest = DatasetManifest::load(&mp).expect("load");
        let (assets, report) =
            build_crop_library(&manifest, &mp, None, false).expect("library");
        assert_eq!(assets.len(), 3);
        assert_eq!(report.kept, 3);
        assert!(report.excluded.is_empty());
        for a in &assets {
            assert!(!a.degraded);
            let (_, _, w, h) = a.tight_box;
            assert!(w >= 10 && h >= 10, "tight box {w}x{h} misses the disc");
        }
    }

    #[test]
    fn uniform_crop_is_excluded_as_degraded() {
        let dir = TempDir::new().expect("tempdir");
        disc_image(64, 200, 40)
            .save_png(&dir.path().join("good.png"))
            .expect("save");
        RasterImage::new(64, 64, 3, 128)
            .save_png(&dir.path().join("flat.png"))
            .expect("save");
        let mp = write_manifest(dir.path(), &["good.png", "flat.png"]);
        let manifest = DatasetManifest::load(&mp).expect("load");
        let (assets, report) =
            build_crop_library(&manifest, &mp, None, false).expect("library");
        assert_eq!(assets.len(), 1);
        assert_eq!(report.excluded.len(), 1);
        assert_eq!(report.excluded[0].id, "flat.png");
        assert!(report.excluded[0].reason.contains("degraded"));

        let (with_degraded, report2) =
            build_crop_library(&manifest, &mp, None, true).expect("library");
        assert_eq!(with_degraded.len(), 2);
        assert_eq!(report2.degraded_kept, 1);
        assert!(with_degraded.iter().any(|a| a.degraded));
    }

    #[test]
    fn external_mask_overrides_image_content() {
        let dir = TempDir::new().expect("tempdir");
        // Flat image would self-segment as degraded; the external mask
        // makes it usable anyway.
        RasterImage::new(32, 32, 3, 128)
            .save_png(&dir.path().join("flat.png"))
            .expect("save");
        let mut mask = BinaryMask::new(32, 32, false);
        for y in 10..20 {
            for x in 8..24 {
                mask.set(x, y, true);
            }
        }
        mask.save_png(&dir.path().join("flat.mask.png")).expect("save mask");
        let mp = write_manifest(dir.path(), &["flat.png"]);
        let manifest = DatasetManifest::load(&mp).expect("load");
        let (assets, report) =
            build_crop_library(&manifest, &mp, Some(dir.path()), false).expect("library");
        assert_eq!(assets.len(), 1);
        assert_eq!(report.external_masks, 1);
        assert_eq!(assets[0].tight_box, (8, 10, 16, 10));
        assert!(!assets[0].degraded);
    }

    #[test]
    fn mismatched_external_mask_excludes_the_crop() {
        let dir = TempDir::new().expect("tempdir");
        disc_image(64, 200, 40)
            .save_png(&dir.path().join("a.png"))
            .expect("save");
        BinaryMask::new(16, 16, true)
            .save_png(&dir.path().join("a.mask.png"))
            .expect("save mask");
        disc_image(64, 200, 40)
            .save_png(&dir.path().join("b.png"))
            .expect("save");
        let mp = write_manifest(dir.path(), &["a.png", "b.png"]);
        let manifest = DatasetManifest::load(&mp).expect("load");
        let (assets, report) =
            build_crop_library(&manifest, &mp, Some(dir.path()), false).expect("library");
        assert_eq!(assets.len(), 1);
        assert_eq!(report.excluded[0].id, "a.png");
        assert!(report.excluded[0].reason.contains("64x64"));
    }

    #[test]
    fn empty_library_is_fatal() {
        let dir = TempDir::new().expect("tempdir");
        RasterImage::new(64, 64, 3, 128)
            .save_png(&dir.path().join("flat.png"))
            .expect("save");
        let mp = write_manifest(dir.path(), &["flat.png"]);
        let manifest = DatasetManifest::load(&mp).expect("load");
        let err = build_crop_library(&manifest, &mp, None, false).unwrap_err();
        assert!(matches!(err, CoreError::CropLibrary { .. }), "{err}");
    }

    #[test]
    fn ground_truth_box_pre_crops_the_object() {
        let dir = TempDir::new().expect("tempdir");
        // 128x128 scene, textured disc centered in its right half.
        let mut img = RasterImage::new(128, 128, 3, 200);
        let mut state = 0x9e3779b97f4a7c15u64;
        for y in 0..128u32 {
            for x in 0..128u32 {
                let dx = x as f64 - 96.0;
                let dy = y as f64 - 64.0;
                if (dx * dx + dy * dy).sqrt() <= 6.0 {
                    let v = speckle(&mut state, 40, 45);
                    for ch in 0..3 {
                        img.set(x, y, ch, v);
                    }
                }
            }
        }
        img.save_png(&dir.path().join("scene.png")).expect("save");
        // Box of 64x64 centered at (96, 64).
        std::fs::write(
            dir.path().join("scene.txt"),
            "0 0.750000 0.500000 0.500000 0.500000\n",
        )
        .expect("write label");
        let mut m = DatasetManifest::new(".", Split::Train, Domain::Source);
        m.entries.push(ManifestEntry {
            image: "scene.png".into(),
            label: Some("scene.txt".into()),
            domain: None,
        });
        let mp = dir.path().join("crops.json");
        m.save(&mp).expect("save manifest");
        let (assets, _) = build_crop_library(&m, &mp, None, false).expect("library");
        assert_eq!(assets.len(), 1);
        assert_eq!((assets[0].image.width, assets[0].image.height), (64, 64));
        let (_, _, w, h) = assets[0].tight_box;
        assert!(w >= 8 && h >= 8, "tight box {w}x{h} misses the disc");
    }
}
