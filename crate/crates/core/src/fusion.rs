//! Latency-aware pose fusion.
//!
//! A DNN pose that took `dt` to come back is trusted with weight
//! `u = 1 - Λ(dt)`, where `Λ` is a logistic curve centred on a reference
//! latency:
//!
//! ```text
//! Λ(dt) = 1 / (1 + exp(-k (dt - dt0)))        (dt, dt0 in seconds)
//! u(dt) = 1 - Λ(dt)
//! ```
//!
//! At a result arrival the fused pose is the convex combination
//! `u * L_alpha + (1 - u) * L_r`; on every other tick it follows the VO
//! increments exactly. Results are stale by the round-trip time, so the DNN
//! pose is first moved forward by the VO displacement accumulated since it
//! was captured.

use crate::pose::Pose;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Sigmoid slope, 1/s.
    pub k: f64,
    /// Reference latency, ms.
    pub dt0_ms: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            k: 1.0,
            dt0_ms: 500.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("non-finite pose component in {0}")]
    NonFinite(&'static str),
    #[error("fusion weight {0} outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("pose dimensions differ: {0} vs {1}")]
    Dimension(usize, usize),
}

/// Current fused estimate and when it last absorbed a DNN result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionState {
    pub l_r: Pose,
    pub last_fuse_tick: Option<u64>,
}

impl FusionState {
    pub fn new(initial: Pose) -> Self {
        FusionState {
            l_r: initial,
            last_fuse_tick: None,
        }
    }
}

/// Latency uncertainty `Λ` in (0, 1), strictly increasing in `dt_ms`.
pub fn uncertainty(dt_ms: f64, cfg: &FusionConfig) -> f64 {
    let x = cfg.k * (dt_ms - cfg.dt0_ms) / 1000.0;
    // Both branches are the same logistic; pick the one whose exp cannot overflow.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn fusion_weight(dt_ms: f64, cfg: &FusionConfig) -> f64 {
    1.0 - uncertainty(dt_ms, cfg)
}

fn check(p: &Pose, what: &'static str) -> Result<(), FusionError> {
    if p.is_finite() {
        Ok(())
    } else {
        Err(FusionError::NonFinite(what))
    }
}

fn check_dims(a: &Pose, b: &Pose) -> Result<(), FusionError> {
    if a.dim() == b.dim() {
        Ok(())
    } else {
        Err(FusionError::Dimension(a.dim(), b.dim()))
    }
}

/// `u * l_alpha + (1 - u) * l_r_prev`, componentwise.
///
/// Each output component is clamped into the interval spanned by its two
/// inputs so rounding can never push it outside.
pub fn fuse_absolute(l_alpha: &Pose, l_r_prev: &Pose, u: f64) -> Result<Pose, FusionError> {
    check(l_alpha, "l_alpha")?;
    check(l_r_prev, "l_r_prev")?;
    check_dims(l_alpha, l_r_prev)?;
    if !(0.0..=1.0).contains(&u) {
        return Err(FusionError::WeightOutOfRange(u));
    }
    let coords = l_alpha
        .coords()
        .iter()
        .zip(l_r_prev.coords())
        .map(|(&a, &r)| {
            let v = u * a + (1.0 - u) * r;
            v.clamp(a.min(r), a.max(r))
        })
        .collect();
    Ok(Pose::new(coords))
}

/// Between arrivals: `l_r_prev + (l_beta_now - l_beta_prev)`.
pub fn propagate_relative(
    l_r_prev: &Pose,
    l_beta_now: &Pose,
    l_beta_prev: &Pose,
) -> Result<Pose, FusionError> {
    check(l_r_prev, "l_r_prev")?;
    check(l_beta_now, "l_beta_now")?;
    check(l_beta_prev, "l_beta_prev")?;
    check_dims(l_r_prev, l_beta_now)?;
    check_dims(l_beta_now, l_beta_prev)?;
    let delta = l_beta_now - l_beta_prev;
    Ok(l_r_prev + &delta)
}

/// Moves a stale DNN pose to the arrival tick by summing the VO increments
/// observed between capture and arrival.
pub fn stale_correction(l_alpha_at_capture: &Pose, vo_deltas_since_capture: &[Pose]) -> Pose {
    let mut out = l_alpha_at_capture.clone();
    for d in vo_deltas_since_capture {
        out += d;
    }
    out
}

/// Upper bound on the fused error: `u * e_dnn + (1 - u) * e_prev`.
pub fn expected_error_bound(u: f64, e_dnn: f64, e_prev: f64) -> f64 {
    u * e_dnn + (1.0 - u) * e_prev
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(k: f64, dt0_s: f64) -> FusionConfig {
        FusionConfig {
            k,
            dt0_ms: dt0_s * 1000.0,
        }
    }

    #[test]
    fn midpoint_is_half() {
        let cfg = FusionConfig::default();
        assert_eq!(uncertainty(cfg.dt0_ms, &cfg), 0.5);
        assert_eq!(fusion_weight(cfg.dt0_ms, &cfg), 0.5);
    }

    #[test]
    fn closed_form_values() {
        // 1/(1+e^5) = 0.0066928509242848554...
        let cfg = secs(1.0, 5.0);
        let lam0 = uncertainty(0.0, &cfg);
        assert!((lam0 - 0.006_692_850_924_284_855).abs() < 1e-15);
        let lam10 = uncertainty(10_000.0, &cfg);
        assert!((lam10 - 0.993_307_149_075_715).abs() < 1e-15);
        assert!((lam0 + lam10 - 1.0).abs() < 1e-15);
        assert!((fusion_weight(0.0, &cfg) - 0.993_307_149_075_715).abs() < 1e-15);
    }

    #[test]
    fn saturates_without_overflow() {
        let cfg = secs(1.0, 0.5);
        assert_eq!(uncertainty(1e9, &cfg), 1.0);
        assert!(uncertainty(0.0, &secs(1e6, 1.0)) >= 0.0);
        assert!(fusion_weight(1e9, &cfg) >= 0.0);
    }

    #[test]
    fn monotone_on_grid() {
        let cfg = FusionConfig::default();
        let grid: Vec<f64> = (0..100).map(|i| i as f64 * 20.0).collect();
        for w in grid.windows(2) {
            assert!(uncertainty(w[0], &cfg) < uncertainty(w[1], &cfg));
            assert!(fusion_weight(w[0], &cfg) > fusion_weight(w[1], &cfg));
        }
    }

    #[test]
    fn fuse_examples() {
        let a = Pose::from([2.0, 0.0]);
        let r = Pose::from([0.0, 0.0]);
        assert_eq!(fuse_absolute(&a, &r, 1.0).unwrap(), a);
        assert_eq!(fuse_absolute(&a, &r, 0.0).unwrap(), r);
        assert_eq!(fuse_absolute(&a, &r, 0.5).unwrap(), Pose::from([1.0, 0.0]));
        let a = Pose::from([4.0, 4.0]);
        assert_eq!(fuse_absolute(&a, &r, 0.25).unwrap(), Pose::from([1.0, 1.0]));
    }

    #[test]
    fn fuse_rejects_bad_input() {
        let ok = Pose::from([1.0, 1.0]);
        let nan = Pose::from([f64::NAN, 0.0]);
        assert_eq!(
            fuse_absolute(&nan, &ok, 0.5),
            Err(FusionError::NonFinite("l_alpha"))
        );
        assert_eq!(
            fuse_absolute(&ok, &nan, 0.5),
            Err(FusionError::NonFinite("l_r_prev"))
        );
        assert_eq!(
            fuse_absolute(&ok, &ok, 1.5),
            Err(FusionError::WeightOutOfRange(1.5))
        );
        assert!(propagate_relative(&ok, &nan, &ok).is_err());
        assert!(matches!(
            fuse_absolute(&ok, &Pose::from([1.0]), 0.5),
            Err(FusionError::Dimension(2, 1))
        ));
    }

    #[test]
    fn propagate_examples() {
        let r = Pose::from([1.0, 1.0]);
        let b = Pose::from([4.0, 4.0]);
        assert_eq!(propagate_relative(&r, &b, &b).unwrap(), r);
        assert_eq!(
            propagate_relative(&r, &Pose::from([5.0, 5.0]), &b).unwrap(),
            Pose::from([2.0, 2.0])
        );
    }

    #[test]
    fn stale_correction_examples() {
        let a = Pose::from([0.0, 0.0]);
        assert_eq!(stale_correction(&a, &[]), a);
        let deltas = [Pose::from([1.0, 0.0]), Pose::from([1.0, 0.0])];
        let corrected = stale_correction(&a, &deltas);
        assert_eq!(corrected, Pose::from([2.0, 0.0]));
        let prior = Pose::from([7.0, -3.0]);
        assert_eq!(fuse_absolute(&corrected, &prior, 1.0).unwrap(), corrected);
    }

    #[test]
    fn bound_examples() {
        assert_eq!(expected_error_bound(0.0, 2.0, 4.0), 4.0);
        assert_eq!(expected_error_bound(0.5, 2.0, 4.0), 3.0);
        assert_eq!(expected_error_bound(1.0, 2.0, 4.0), 2.0);
    }
}
