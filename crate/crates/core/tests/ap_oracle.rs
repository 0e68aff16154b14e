//! Brute-force threshold-enumeration oracle for average precision.
//!
//! For every distinct confidence the oracle re-matches the retained
//! detections from scratch and integrates the resulting points with
//! its own envelope and 11-point formulas, independent of the library.

use std::collections::BTreeMap;

use nsn_core::annotations::BBox;
use nsn_core::eval::{average_precision, Detection, IntegrationMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ax1) = (a.x_min(), a.x_max());
    let (ay0, ay1) = (a.y_min(), a.y_max());
    let (bx0, bx1) = (b.x_min(), b.x_max());
    let (by0, by1) = (b.y_min(), b.y_max());
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy matching of `dets` (already ordered) against `gt`; returns
/// (tp, fp).
fn match_subset(
    gt: &BTreeMap<String, Vec<BBox>>,
    dets: &[&Detection],
    iou_threshold: f64,
) -> (usize, usize) {
    let mut used: BTreeMap<&str, Vec<bool>> = gt
        .iter()
        .map(|(k, v)| (k.as_str(), vec![false; v.len()]))
        .collect();
    let (mut tp, mut fp) = (0, 0);
    for d in dets {
        let boxes = gt.get(&d.image).map(|v| v.as_slice()).unwrap_or(&[]);
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in boxes.iter().enumerate() {
            if used[d.image.as_str()][gi] {
                continue;
            }
            let v = iou(&d.bbox, g);
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) if v >= iou_threshold => {
                used.get_mut(d.image.as_str()).expect("image key")[gi] = true;
                tp += 1;
            }
            _ => fp += 1,
        }
    }
    (tp, fp)
}

/// (recall, precision) per distinct confidence, strongest first.
fn oracle_points(
    gt: &BTreeMap<String, Vec<BBox>>,
    dets: &[Detection],
    iou_threshold: f64,
) -> Vec<(f64, f64)> {
    let n_gt: usize = gt.values().map(Vec::len).sum();
    let mut ordered: Vec<&Detection> = dets.iter().collect();
    ordered.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.image.cmp(&b.image))
            .then_with(|| a.box_index.cmp(&b.box_index))
    });
    let mut thresholds: Vec<f64> = ordered.iter().map(|d| d.confidence).collect();
    thresholds.dedup();
    let mut points = Vec::new();
    for t in thresholds {
        let subset: Vec<&Detection> = ordered
            .iter()
            .copied()
            .filter(|d| d.confidence >= t)
            .collect();
        let (tp, fp) = match_subset(gt, &subset, iou_threshold);
        let recall = if n_gt == 0 {
            0.0
        } else {
            tp as f64 / n_gt as f64
        };
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        points.push((recall, precision));
    }
    points
}

fn oracle_all_point(points: &[(f64, f64)], n_gt: usize, n_det: usize) -> f64 {
    if n_gt == 0 {
        return if n_det == 0 { 1.0 } else { 0.0 };
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0f64;
    for (k, &(r, _)) in points.iter().enumerate() {
        let envelope = points[k..]
            .iter()
            .map(|&(_, p)| p)
            .fold(0.0f64, f64::max);
        area += (r - prev_recall) * envelope;
        prev_recall = r;
    }
    area
}

fn oracle_eleven_point(points: &[(f64, f64)], n_gt: usize, n_det: usize) -> f64 {
    if n_gt == 0 {
        return if n_det == 0 { 1.0 } else { 0.0 };
    }
    let mut total = 0.0;
    for i in 0..=10 {
        let r = i as f64 / 10.0;
        let p = points
            .iter()
            .filter(|&&(pr, _)| pr >= r - 1e-12)
            .map(|&(_, p)| p)
            .fold(0.0f64, f64::max);
        total += p;
    }
    total / 11.0
}

fn random_instance(
    rng: &mut ChaCha8Rng,
) -> (BTreeMap<String, Vec<BBox>>, Vec<Detection>) {
    let images = ["a.png", "b.png", "c.png"];
    let n_images = rng.gen_range(1..=3usize);
    let grid = 64.0;
    let mut gt = BTreeMap::new();
    let mut gt_flat = Vec::new();
    for image in &images[..n_images] {
        let count = rng.gen_range(0..=5usize);
        let mut boxes = Vec::new();
        for _ in 0..count {
            let w = rng.gen_range(4..=20u32) as f64;
            let h = rng.gen_range(4..=20u32) as f64;
            let x = rng.gen_range(0..=(64 - w as u32)) as f64;
            let y = rng.gen_range(0..=(64 - h as u32)) as f64;
            let b = BBox::new(
                (x + w / 2.0) / grid,
                (y + h / 2.0) / grid,
                w / grid,
                h / grid,
            )
            .expect("valid box");
            boxes.push(b);
            gt_flat.push((image.to_string(), b));
        }
        gt.insert(image.to_string(), boxes);
    }
    let alphabet = [0.1, 0.3, 0.5, 0.7, 0.9];
    let n_det = rng.gen_range(0..=12usize);
    let mut dets = Vec::new();
    for i in 0..n_det {
        let bbox = if !gt_flat.is_empty() && rng.gen_bool(0.7) {
            // Jittered copy of a ground-truth box.
            let (_, base) = gt_flat[rng.gen_range(0..gt_flat.len())];
            let dx = rng.gen_range(-6..=6i32) as f64 / grid;
            let dy = rng.gen_range(-6..=6i32) as f64 / grid;
            let cx = (base.cx + dx).clamp(base.w / 2.0, 1.0 - base.w / 2.0);
            let cy = (base.cy + dy).clamp(base.h / 2.0, 1.0 - base.h / 2.0);
            BBox::new(cx, cy, base.w, base.h).expect("valid box")
        } else {
            let w = rng.gen_range(4..=20u32) as f64;
            let h = rng.gen_range(4..=20u32) as f64;
            let x = rng.gen_range(0..=(64 - w as u32)) as f64;
            let y = rng.gen_range(0..=(64 - h as u32)) as f64;
            BBox::new(
                (x + w / 2.0) / grid,
                (y + h / 2.0) / grid,
                w / grid,
                h / grid,
            )
            .expect("valid box")
        };
        let confidence = if rng.gen_bool(0.5) {
            alphabet[rng.gen_range(0..alphabet.len())]
        } else {
            rng.gen_range(0.01..1.0)
        };
        let image = images[rng.gen_range(0..n_images)].to_string();
        dets.push(Detection {
            image,
            box_index: i,
            bbox,
            confidence,
        });
    }
    (gt, dets)
}

#[test]
fn all_point_ap_matches_the_threshold_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA9);
    for case in 0..200 {
        let (gt, dets) = random_instance(&mut rng);
        let n_gt: usize = gt.values().map(Vec::len).sum();
        let result =
            average_precision(&gt, &dets, 0.5, IntegrationMode::AllPoint).expect("evaluation");
        let points = oracle_points(&gt, &dets, 0.5);
        let expected = oracle_all_point(&points, n_gt, dets.len());
        assert!(
            (result.ap - expected).abs() <= 1e-9,
            "case {case}: ap {} vs oracle {expected}",
            result.ap
        );
        assert_eq!(result.curve.len(), points.len(), "case {case}: point count");
        if let Some((tp, fp)) = points
            .last()
            .map(|_| match_subset(&gt, &points_subset(&dets), 0.5))
        {
            assert_eq!((result.tp, result.fp), (tp, fp), "case {case}: totals");
            assert_eq!(result.fn_count, n_gt - tp, "case {case}: misses");
        }
    }
}

/// Full detection list in evaluation order, for the totals check.
fn points_subset(dets: &[Detection]) -> Vec<&Detection> {
    let mut ordered: Vec<&Detection> = dets.iter().collect();
    ordered.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.image.cmp(&b.image))
            .then_with(|| a.box_index.cmp(&b.box_index))
    });
    ordered
}

#[test]
fn eleven_point_ap_matches_the_threshold_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB7);
    for case in 0..200 {
        let (gt, dets) = random_instance(&mut rng);
        let n_gt: usize = gt.values().map(Vec::len).sum();
        let result =
            average_precision(&gt, &dets, 0.5, IntegrationMode::ElevenPoint).expect("evaluation");
        let points = oracle_points(&gt, &dets, 0.5);
        let expected = oracle_eleven_point(&points, n_gt, dets.len());
        assert!(
            (result.ap - expected).abs() <= 1e-9,
            "case {case}: ap {} vs oracle {expected}",
            result.ap
        );
    }
}

#[test]
fn identical_predictions_score_a_perfect_hundred() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let (gt, _) = random_instance(&mut rng);
    let mut dets = Vec::new();
    for (image, boxes) in &gt {
        for (i, b) in boxes.iter().enumerate() {
            dets.push(Detection {
                image: image.clone(),
                box_index: i,
                bbox: *b,
                confidence: 1.0,
            });
        }
    }
    assert!(!dets.is_empty(), "fixture needs boxes");
    let result =
        average_precision(&gt, &dets, 0.5, IntegrationMode::AllPoint).expect("evaluation");
    assert_eq!(result.ap * 100.0, 100.0);
    assert_eq!(result.fp, 0);
    assert_eq!(result.fn_count, 0);
}
