//! Adaptation gain: where an adapted model lands on the scale from a
//! source-only baseline to a fully supervised oracle.
//!
//! gain = (adapted - source_only) / (oracle - source_only) * 100.
//! All three inputs are mAP percentages. The ratio is kept at full
//! precision; the report carries a one-decimal display form rounded
//! half-up.

use crate::error::CoreError;
use crate::util::format1;
use crate::Result;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdaptationGainInputs {
    /// mAP of the adapted model, in percent.
    pub map_adapted: f64,
    /// mAP of the source-only baseline, in percent.
    pub map_source_only: f64,
    /// mAP of the oracle trained on target labels, in percent.
    pub map_oracle: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainReport {
    pub theta_a: f64,
    pub theta_s: f64,
    pub theta_o: f64,
    /// Full-precision gain percentage.
    pub rho: f64,
    /// One-decimal display form, rounded half-up.
    pub rho_display: String,
}

pub fn adaptation_gain(inputs: AdaptationGainInputs) -> Result<GainReport> {
    let AdaptationGainInputs {
        map_adapted: a,
        map_source_only: s,
        map_oracle: o,
    } = inputs;
    for (name, v) in [("adapted", a), ("source-only", s), ("oracle", o)] {
        if !v.is_finite() || !(0.0..=100.0).contains(&v) {
            return Err(CoreError::EvalInput {
                message: format!("{name} mAP {v} outside [0, 100]"),
            });
        }
    }
    if o == s {
        return Err(CoreError::Arithmetic {
            message: format!("gain undefined: oracle and source-only mAP both {o}"),
        });
    }
    let rho = (a - s) / (o - s) * 100.0;
    Ok(GainReport {
        theta_a: a,
        theta_s: s,
        theta_o: o,
        rho,
        rho_display: format1(rho),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gain(a: f64, s: f64, o: f64) -> GainReport {
        adaptation_gain(AdaptationGainInputs {
            map_adapted: a,
            map_source_only: s,
            map_oracle: o,
        })
        .expect("well-defined gain")
    }

    #[test]
    fn anchor_points() {
        assert_eq!(gain(39.9, 39.9, 89.5).rho, 0.0);
        assert_eq!(gain(89.5, 39.9, 89.5).rho, 100.0);
    }

    #[test]
    fn representative_values_round_to_one_decimal() {
        assert_eq!(gain(46.9, 39.9, 89.5).rho_display, "14.1");
        assert_eq!(gain(41.1, 39.9, 89.5).rho_display, "2.4");
        assert_eq!(gain(34.4, 28.7, 89.5).rho_display, "9.4");
        let r = gain(61.5, 31.9, 89.1);
        assert!((r.rho - 51.748).abs() < 5e-4, "rho {}", r.rho);
        assert_eq!(r.rho_display, "51.7");
    }

    #[test]
    fn regression_below_baseline_is_negative() {
        let r = gain(24.6, 39.9, 89.5);
        assert!(r.rho < 0.0);
        assert!((r.rho - (24.6 - 39.9) / (89.5 - 39.9) * 100.0).abs() < 1e-12);
    }

    #[test]
    fn affine_rescaling_of_all_inputs_preserves_gain() {
        let base = gain(50.0, 30.0, 90.0);
        let scaled = gain(55.0, 45.0, 75.0); // 0.5x + 20
        assert!((base.rho - scaled.rho).abs() < 1e-9);
    }

    #[test]
    fn oracle_equal_to_source_is_undefined() {
        let err = adaptation_gain(AdaptationGainInputs {
            map_adapted: 50.0,
            map_source_only: 40.0,
            map_oracle: 40.0,
        })
        .unwrap_err();
        assert!(matches!(err, CoreError::Arithmetic { .. }), "{err}");
    }

    #[test]
    fn out_of_range_inputs_are_rejected() {
        for bad in [-0.1, 100.1, f64::NAN, f64::INFINITY] {
            let err = adaptation_gain(AdaptationGainInputs {
                map_adapted: bad,
                map_source_only: 40.0,
                map_oracle: 90.0,
            })
            .unwrap_err();
            assert!(matches!(err, CoreError::EvalInput { .. }), "{bad}");
        }
    }
}
