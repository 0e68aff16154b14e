//! Difficulty-aware curriculum filtering of pseudo labels.
//!
//! Candidate predictions above a floor confidence are grouped by
//! difficulty category; each category's share of high-confidence
//! members sets its adaptive acceptance threshold between the floor
//! and the ceiling. Harder categories (lower share) get lower
//! thresholds, so they are not starved out of training.

use crate::difficulty::DifficultyCategory;
use crate::error::CoreError;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One prediction's confidence with its difficulty category, keyed
/// back to the image and box it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub image: String,
    pub box_index: usize,
    pub category: DifficultyCategory,
    pub confidence: f64,
}

/// Floor and ceiling for the adaptive thresholds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurriculumBounds {
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for CurriculumBounds {
    fn default() -> Self {
        CurriculumBounds {
            tau_min: 0.25,
            tau_max: 0.75,
        }
    }
}

impl CurriculumBounds {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_min > 0.0
            && self.tau_min < self.tau_max
            && self.tau_max < 1.0
            && self.tau_min.is_finite()
            && self.tau_max.is_finite();
        if !ok {
            return Err(CoreError::InvalidParameter {
                message: format!(
                    "curriculum bounds need 0 < tau_min < tau_max < 1, got ({}, {})",
                    self.tau_min, self.tau_max
                ),
            });
        }
        Ok(())
    }
}

/// Per-category learning state: candidate count and high-confidence
/// share.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct CategoryStat {
    pub candidates: usize,
    /// Fraction of candidates with confidence strictly above the
    /// ceiling; zero when the category has no candidates.
    pub sigma: f64,
}

/// The computed per-category thresholds with their inputs, ready to
/// serialize as a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveThresholds {
    pub bounds: CurriculumBounds,
    pub stats: BTreeMap<DifficultyCategory, CategoryStat>,
    pub thresholds: BTreeMap<DifficultyCategory, f64>,
    /// True when no category had any high-confidence candidate and
    /// every threshold fell back to the ceiling.
    pub fallback_all_max: bool,
}

impl AdaptiveThresholds {
    pub fn threshold(&self, category: DifficultyCategory) -> f64 {
        self.thresholds[&category]
    }
}

/// Drops predictions at or below the floor confidence; survivors are
/// curriculum candidates.
pub fn candidate_filter(records: &[ConfidenceRecord], tau_min: f64) -> Vec<ConfidenceRecord> {
    records
        .iter()
        .filter(|r| r.confidence > tau_min)
        .cloned()
        .collect()
}

/// Per-category share of candidates strictly above the ceiling.
pub fn relative_difficulty(
    candidates: &[ConfidenceRecord],
    tau_max: f64,
) -> BTreeMap<DifficultyCategory, CategoryStat> {
    let mut stats: BTreeMap<DifficultyCategory, CategoryStat> = DifficultyCategory::ALL
        .iter()
        .map(|&c| (c, CategoryStat::default()))
        .collect();
    let mut high: BTreeMap<DifficultyCategory, usize> =
        DifficultyCategory::ALL.iter().map(|&c| (c, 0)).collect();
    for r in candidates {
        let s = stats.get_mut(&r.category).expect("all categories present");
        s.candidates += 1;
        if r.confidence > tau_max {
            *high.get_mut(&r.category).expect("all categories present") += 1;
        }
    }
    for (c, s) in stats.iter_mut() {
        if s.candidates > 0 {
            s.sigma = high[c] as f64 / s.candidates as f64;
        }
    }
    stats
}

/// Scales each category's threshold by its share relative to the best
/// category: `tau(c) = max(sigma(c) / max_sigma * tau_max, tau_min)`.
/// When every share is zero the thresholds all sit at the ceiling.
pub fn adaptive_thresholds(
    candidates: &[ConfidenceRecord],
    bounds: CurriculumBounds,
) -> Result<AdaptiveThresholds> {
    bounds.validate()?;
    let stats = relative_difficulty(candidates, bounds.tau_max);
    let max_sigma = stats
        .values()
        .map(|s| s.sigma)
        .fold(0.0f64, f64::max);
    let fallback_all_max = max_sigma == 0.0;
    let thresholds = stats
        .iter()
        .map(|(&c, s)| {
            let tau = if fallback_all_max {
                bounds.tau_max
            } else {
                (s.sigma / max_sigma * bounds.tau_max)
                    .max(bounds.tau_min)
                    .min(bounds.tau_max)
            };
            (c, tau)
        })
        .collect();
    Ok(AdaptiveThresholds {
        bounds,
        stats,
        thresholds,
        fallback_all_max,
    })
}

/// One accept/reject decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdDecision {
    pub image: String,
    pub box_index: usize,
    pub category: DifficultyCategory,
    pub confidence: f64,
    pub threshold: f64,
    pub accepted: bool,
    /// Confidence minus threshold; negative for rejections.
    pub margin: f64,
}

/// Applies per-category thresholds to candidates: accepted when
/// confidence strictly exceeds the category threshold.
pub fn apply_thresholds(
    candidates: &[ConfidenceRecord],
    thresholds: &AdaptiveThresholds,
) -> Vec<ThresholdDecision> {
    candidates
        .iter()
        .map(|r| {
            let tau = thresholds.threshold(r.category);
            ThresholdDecision {
                image: r.image.clone(),
                box_index: r.box_index,
                category: r.category,
                confidence: r.confidence,
                threshold: tau,
                accepted: r.confidence > tau,
                margin: r.confidence - tau,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(category: DifficultyCategory, confidence: f64) -> ConfidenceRecord {
        ConfidenceRecord {
            image: "img.png".into(),
            box_index: 0,
            category,
            confidence,
        }
    }

    #[test]
    fn floor_filter_is_strict() {
        let records = vec![
            rec(DifficultyCategory::SmallTarget, 0.2),
            rec(DifficultyCategory::SmallTarget, 0.25),
            rec(DifficultyCategory::SmallTarget, 0.3),
        ];
        let kept = candidate_filter(&records, 0.25);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.3);
    }

    #[test]
    fn shares_count_strictly_above_ceiling() {
        let candidates = vec![
            rec(DifficultyCategory::SmallTarget, 0.8),
            rec(DifficultyCategory::SmallTarget, 0.9),
            rec(DifficultyCategory::SmallTarget, 0.75),
            rec(DifficultyCategory::LowContrast, 0.5),
        ];
        let stats = relative_difficulty(&candidates, 0.75);
        let st = stats[&DifficultyCategory::SmallTarget];
        assert_eq!(st.candidates, 3);
        assert!((st.sigma - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(stats[&DifficultyCategory::LowContrast].sigma, 0.0);
        assert_eq!(stats[&DifficultyCategory::ComplexBackground].candidates, 0);
    }

    #[test]
    fn thresholds_scale_by_relative_share() {
        // Shares 2/3 and 1/3: the leader pins the ceiling, the other
        // lands at half of it.
        let candidates = vec![
            rec(DifficultyCategory::SmallTarget, 0.8),
            rec(DifficultyCategory::SmallTarget, 0.9),
            rec(DifficultyCategory::SmallTarget, 0.6),
            rec(DifficultyCategory::LowContrast, 0.8),
            rec(DifficultyCategory::LowContrast, 0.6),
            rec(DifficultyCategory::LowContrast, 0.5),
        ];
        let t = adaptive_thresholds(&candidates, CurriculumBounds::default()).expect("thresholds");
        assert!((t.threshold(DifficultyCategory::SmallTarget) - 0.75).abs() < 1e-15);
        assert!((t.threshold(DifficultyCategory::LowContrast) - 0.375).abs() < 1e-15);
        // Empty categories ride the floor.
        assert_eq!(t.threshold(DifficultyCategory::SimpleExample), 0.25);
        assert!(!t.fallback_all_max);
    }

    #[test]
    fn all_zero_shares_fall_back_to_ceiling() {
        let candidates = vec![
            rec(DifficultyCategory::SmallTarget, 0.5),
            rec(DifficultyCategory::LowContrast, 0.6),
        ];
        let t = adaptive_thresholds(&candidates, CurriculumBounds::default()).expect("thresholds");
        assert!(t.fallback_all_max);
        for c in DifficultyCategory::ALL {
            assert_eq!(t.threshold(c), 0.75, "{c:?}");
        }
    }

    #[test]
    fn empty_candidates_also_fall_back() {
        let t = adaptive_thresholds(&[], CurriculumBounds::default()).expect("thresholds");
        assert!(t.fallback_all_max);
        assert_eq!(t.threshold(DifficultyCategory::ComplexBackground), 0.75);
    }

    #[test]
    fn decisions_carry_margins() {
        let candidates = vec![
            rec(DifficultyCategory::SmallTarget, 0.8),
            rec(DifficultyCategory::SmallTarget, 0.9),
            rec(DifficultyCategory::SmallTarget, 0.6),
            rec(DifficultyCategory::LowContrast, 0.8),
            rec(DifficultyCategory::LowContrast, 0.6),
            rec(DifficultyCategory::LowContrast, 0.30),
        ];
        let t = adaptive_thresholds(&candidates, CurriculumBounds::default()).expect("thresholds");
        let decisions = apply_thresholds(&candidates, &t);
        let low = &decisions[5];
        assert!(!low.accepted);
        assert!((low.margin - (0.30 - 0.375)).abs() < 1e-15);
        let high = &decisions[1];
        assert!(high.accepted);
        assert!((high.margin - 0.15).abs() < 1e-15);
    }

    #[test]
    fn acceptance_is_strict_at_the_threshold() {
        // A candidate exactly at its category threshold is rejected.
        let candidates = vec![
            rec(DifficultyCategory::SmallTarget, 0.8),
            rec(DifficultyCategory::SmallTarget, 0.75),
        ];
        let t = adaptive_thresholds(&candidates, CurriculumBounds::default()).expect("thresholds");
        assert_eq!(t.threshold(DifficultyCategory::SmallTarget), 0.75);
        let decisions = apply_thresholds(&candidates, &t);
        assert!(decisions[0].accepted);
        assert!(!decisions[1].accepted);
    }

    #[test]
    fn bounds_are_validated() {
        for (lo, hi) in [(0.0, 0.75), (0.5, 0.5), (0.25, 1.0), (0.8, 0.2)] {
            let b = CurriculumBounds {
                tau_min: lo,
                tau_max: hi,
            };
            assert!(adaptive_thresholds(&[], b).is_err(), "({lo}, {hi})");
        }
    }
}
