//! Property suites for the geometry, label, curriculum, and imaging
//! invariants.

use std::collections::BTreeSet;

use nsn_core::annotations::{save_labels, BBox, LabelKind, LabeledBox, PixelRect};
use nsn_core::annotations::load_labels_with_provenance;
use nsn_core::curriculum::{
    adaptive_thresholds, apply_thresholds, candidate_filter, relative_difficulty,
    ConfidenceRecord, CurriculumBounds,
};
use nsn_core::difficulty::{classify, DifficultyCategory, DifficultyMetrics, DifficultyThresholds};
use nsn_core::imaging::{BinaryMask, RasterImage};
use proptest::prelude::*;

fn arb_bbox() -> impl Strategy<Value = BBox> {
    (0.2f64..0.8, 0.2f64..0.8, 0.05f64..0.3, 0.05f64..0.3)
        .prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h).expect("valid box"))
}

fn arb_pixel_rect() -> impl Strategy<Value = PixelRect> {
    (0i64..900, 0i64..900, 1u32..100, 1u32..100)
        .prop_map(|(x, y, w, h)| PixelRect::from_xywh(x, y, w, h))
}

proptest! {
    #[test]
    fn iou_is_symmetric_bounded_and_exact_on_self(a in arb_bbox(), b in arb_bbox()) {
        let ab = a.iou(&b);
        let ba = b.iou(&a);
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn normalized_iou_agrees_with_integer_rect_iou(a in arb_pixel_rect(), b in arb_pixel_rect()) {
        let na = a.to_bbox(1000, 1000).expect("in image");
        let nb = b.to_bbox(1000, 1000).expect("in image");
        let exact = a.iou(&b);
        prop_assert!(
            (na.iou(&nb) - exact).abs() <= 1e-9,
            "normalized {} vs integer {}", na.iou(&nb), exact
        );
    }

    #[test]
    fn pixel_round_trip_stays_within_one_pixel(r in arb_pixel_rect()) {
        let bbox = r.to_bbox(1000, 1000).expect("in image");
        let back = bbox.to_pixel_rect(1000, 1000);
        prop_assert!((back.x - r.x).abs() <= 1);
        prop_assert!((back.y - r.y).abs() <= 1);
        prop_assert!((back.w as i64 - r.w as i64).abs() <= 1);
        prop_assert!((back.h as i64 - r.h as i64).abs() <= 1);
    }

    #[test]
    fn label_files_round_trip(
        boxes in prop::collection::vec((arb_bbox(), 0u8..3, 0.0f64..=1.0), 0..12)
    ) {
        let dir = tempfile::TempDir::new().expect("tempdir");
        let path = dir.path().join("labels.txt");
        let labeled: Vec<LabeledBox> = boxes
            .iter()
            .map(|&(bbox, kind, conf)| match kind {
                0 => LabeledBox::ground_truth(bbox),
                1 => LabeledBox::pasted_true(bbox),
                _ => LabeledBox::pseudo(bbox, conf).expect("valid confidence"),
            })
            .collect();
        save_labels(&labeled, &path).expect("save");
        let loaded =
            load_labels_with_provenance(&path, (1000, 1000), LabelKind::GroundTruth)
                .expect("load");
        prop_assert_eq!(loaded.len(), labeled.len());
        for (orig, back) in labeled.iter().zip(&loaded) {
            prop_assert_eq!(orig.kind, back.kind);
            prop_assert!((orig.bbox.cx - back.bbox.cx).abs() <= 5e-7);
            prop_assert!((orig.bbox.cy - back.bbox.cy).abs() <= 5e-7);
            prop_assert!((orig.bbox.w - back.bbox.w).abs() <= 5e-7);
            prop_assert!((orig.bbox.h - back.bbox.h).abs() <= 5e-7);
            match (orig.confidence, back.confidence) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 5e-7),
                (None, None) => {}
                other => prop_assert!(false, "confidence mismatch: {:?}", other),
            }
        }
    }

    #[test]
    fn mask_resize_preserves_full_and_empty(
        w in 2u32..40, h in 2u32..40, nw in 2u32..40, nh in 2u32..40
    ) {
        let full = BinaryMask::new(w, h, true).resize_bilinear(nw, nh).expect("resize");
        prop_assert_eq!(full.count_on(), (nw * nh) as usize);
        let empty = BinaryMask::new(w, h, false).resize_bilinear(nw, nh).expect("resize");
        prop_assert_eq!(empty.count_on(), 0);
    }

    #[test]
    fn grayscale_stays_within_channel_extremes(
        pixels in prop::collection::vec((0u8..=255, 0u8..=255, 0u8..=255), 1..64)
    ) {
        let w = pixels.len() as u32;
        let mut img = RasterImage::new(w, 1, 3, 0);
        for (x, &(r, g, b)) in pixels.iter().enumerate() {
            img.set(x as u32, 0, 0, r);
            img.set(x as u32, 0, 1, g);
            img.set(x as u32, 0, 2, b);
        }
        let gray = img.to_grayscale();
        for (x, &(r, g, b)) in pixels.iter().enumerate() {
            let v = gray.get(x as u32, 0, 0);
            let lo = r.min(g).min(b);
            let hi = r.max(g).max(b);
            prop_assert!(v >= lo && v <= hi, "luma {v} outside [{lo}, {hi}]");
        }
    }
}

fn category(i: u8) -> DifficultyCategory {
    DifficultyCategory::ALL[(i % 4) as usize]
}

fn records_from(spec: &[(u8, f64)]) -> Vec<ConfidenceRecord> {
    spec.iter()
        .enumerate()
        .map(|(i, &(cat, confidence))| ConfidenceRecord {
            image: format!("img{:03}.png", i / 4),
            box_index: i % 4,
            category: category(cat),
            confidence,
        })
        .collect()
}

proptest! {
    #[test]
    fn thresholds_stay_in_bounds_and_follow_the_formula(
        spec in prop::collection::vec((0u8..4, 0.0f64..=1.0), 0..60)
    ) {
        let bounds = CurriculumBounds::default();
        let records = records_from(&spec);
        let candidates = candidate_filter(&records, bounds.tau_min);
        for c in &candidates {
            prop_assert!(c.confidence > bounds.tau_min);
        }
        let thresholds = adaptive_thresholds(&candidates, bounds).expect("bounds valid");
        // Direct recomputation of the two formulas.
        let mut sigma = std::collections::BTreeMap::new();
        for cat in DifficultyCategory::ALL {
            let of_cat: Vec<&ConfidenceRecord> =
                candidates.iter().filter(|r| r.category == cat).collect();
            let s = if of_cat.is_empty() {
                0.0
            } else {
                of_cat.iter().filter(|r| r.confidence > bounds.tau_max).count() as f64
                    / of_cat.len() as f64
            };
            sigma.insert(cat, s);
        }
        let max_sigma = sigma.values().copied().fold(0.0f64, f64::max);
        prop_assert_eq!(thresholds.fallback_all_max, max_sigma == 0.0);
        for cat in DifficultyCategory::ALL {
            let tau = thresholds.threshold(cat);
            prop_assert!(tau >= bounds.tau_min - 1e-12 && tau <= bounds.tau_max + 1e-12);
            let expected = if max_sigma == 0.0 {
                bounds.tau_max
            } else {
                (sigma[&cat] / max_sigma * bounds.tau_max).max(bounds.tau_min)
            };
            prop_assert!(
                (tau - expected).abs() <= 1e-12,
                "{cat:?}: {tau} vs direct {expected}"
            );
        }
        // Monotone in sigma.
        for a in DifficultyCategory::ALL {
            for b in DifficultyCategory::ALL {
                if sigma[&a] >= sigma[&b] {
                    prop_assert!(
                        thresholds.threshold(a) >= thresholds.threshold(b) - 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn thresholds_depend_only_on_sigma_ratios(
        spec in prop::collection::vec((0u8..4, prop::bool::ANY), 1..40)
    ) {
        // Category mix where sigma halves when each category doubles
        // its low-confidence candidates; the tau values must not move.
        let bounds = CurriculumBounds::default();
        let base: Vec<(u8, f64)> = spec
            .iter()
            .map(|&(cat, high)| (cat, if high { 0.9 } else { 0.5 }))
            .collect();
        let halved: Vec<(u8, f64)> = base
            .iter()
            .copied()
            .flat_map(|(cat, conf)| [(cat, conf), (cat, 0.5)])
            .collect();
        let t_base =
            adaptive_thresholds(&records_from(&base), bounds).expect("bounds valid");
        let t_halved =
            adaptive_thresholds(&records_from(&halved), bounds).expect("bounds valid");
        for cat in DifficultyCategory::ALL {
            let occupied = records_from(&base).iter().any(|r| r.category == cat);
            if occupied {
                prop_assert!(
                    (t_base.threshold(cat) - t_halved.threshold(cat)).abs() <= 1e-12,
                    "{cat:?}: {} vs {}", t_base.threshold(cat), t_halved.threshold(cat)
                );
            }
        }
    }

    #[test]
    fn raising_thresholds_never_accepts_more(
        spec in prop::collection::vec((0u8..4, 0.0f64..=1.0), 0..60)
    ) {
        let bounds = CurriculumBounds::default();
        let candidates = candidate_filter(&records_from(&spec), bounds.tau_min);
        let adaptive = adaptive_thresholds(&candidates, bounds).expect("bounds valid");
        let mut ceiling = adaptive.clone();
        for tau in ceiling.thresholds.values_mut() {
            *tau = bounds.tau_max;
        }
        let keyed = |d: &nsn_core::curriculum::ThresholdDecision| {
            (d.image.clone(), d.box_index)
        };
        let accepted_adaptive: BTreeSet<_> = apply_thresholds(&candidates, &adaptive)
            .iter()
            .filter(|d| d.accepted)
            .map(keyed)
            .collect();
        let accepted_ceiling: BTreeSet<_> = apply_thresholds(&candidates, &ceiling)
            .iter()
            .filter(|d| d.accepted)
            .map(keyed)
            .collect();
        prop_assert!(accepted_ceiling.is_subset(&accepted_adaptive));
    }

    #[test]
    fn sigma_never_drops_after_acceptance(
        spec in prop::collection::vec((0u8..4, 0.0f64..=1.0), 0..60)
    ) {
        let bounds = CurriculumBounds::default();
        let candidates = candidate_filter(&records_from(&spec), bounds.tau_min);
        let thresholds = adaptive_thresholds(&candidates, bounds).expect("bounds valid");
        let decisions = apply_thresholds(&candidates, &thresholds);
        let accepted: Vec<ConfidenceRecord> = candidates
            .iter()
            .zip(&decisions)
            .filter(|(_, d)| d.accepted)
            .map(|(c, _)| c.clone())
            .collect();
        let before = relative_difficulty(&candidates, bounds.tau_max);
        let after = relative_difficulty(&accepted, bounds.tau_max);
        for cat in DifficultyCategory::ALL {
            prop_assert!(
                after[&cat].sigma >= before[&cat].sigma - 1e-12,
                "{cat:?}: {} dropped below {}", after[&cat].sigma, before[&cat].sigma
            );
        }
    }

    #[test]
    fn classification_fires_exactly_one_branch(
        ts in prop::sample::select(vec![1.0, 100.0, 255.9, 256.0, 256.1, 400.0, 5000.0]),
        lc in prop::sample::select(vec![0.0, 5.0, 9.9, 10.0, 10.1, 50.0, 200.0]),
        bc in prop::sample::select(vec![0.0, 5.0, 9.9, 10.0, 10.1, 50.0, 200.0]),
    ) {
        let thresholds = DifficultyThresholds::default();
        let metrics = DifficultyMetrics {
            target_size: ts,
            local_contrast: lc,
            background_complexity: bc,
            background_pixels: 500,
        };
        let got = classify(&metrics, &thresholds);
        let expected = if ts <= 256.0 {
            DifficultyCategory::SmallTarget
        } else if lc <= 10.0 {
            DifficultyCategory::LowContrast
        } else if bc <= 10.0 {
            DifficultyCategory::SimpleExample
        } else {
            DifficultyCategory::ComplexBackground
        };
        prop_assert_eq!(got, expected);
    }
}
