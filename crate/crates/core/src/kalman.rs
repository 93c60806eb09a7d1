//! Linear Kalman filter baseline with per-axis scalar covariance.
//!
//! VO increments are the control input, DNN poses the measurement. There is
//! no outlier gating: every measurement moves the estimate by
//! `K * residual`, so a biased DNN drags the estimate along with it.

use crate::pose::Pose;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    /// Process-noise variance per axis per predict, m^2.
    pub q: f64,
    /// Measurement-noise variance per axis, m^2.
    pub r: f64,
    /// State transition scalar.
    pub a: f64,
    /// Control scalar applied to the VO increment.
    pub b: f64,
    /// Initial variance, m^2.
    pub p0: f64,
    /// Feed the filter the VO-forwarded DNN pose instead of the raw stale one.
    pub stale_corrected: bool,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            q: 0.01,
            r: 1.0,
            a: 1.0,
            b: 1.0,
            p0: 1.0,
            stale_corrected: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub l_r: Pose,
    pub p: f64,
}

impl KalmanState {
    pub fn new(l_r: Pose, p: f64) -> Self {
        KalmanState { l_r, p }
    }
}

pub fn kf_predict(state: &KalmanState, vo_delta: &Pose, cfg: &KalmanConfig) -> KalmanState {
    let l_r = &state.l_r.scale(cfg.a) + &vo_delta.scale(cfg.b);
    KalmanState {
        l_r,
        p: cfg.a * cfg.a * state.p + cfg.q,
    }
}

/// Measurement update. Returns the new state and the gain used.
pub fn kf_update(state: &KalmanState, l_alpha: &Pose, cfg: &KalmanConfig) -> (KalmanState, f64) {
    let gain = state.p / (state.p + cfg.r);
    let residual = l_alpha - &state.l_r;
    let l_r = &state.l_r + &residual.scale(gain);
    (
        KalmanState {
            l_r,
            p: (1.0 - gain) * state.p,
        },
        gain,
    )
}

/// Closed-loop response to a constant measurement bias.
///
/// The true position is held at the origin and every measurement equals
/// `mu` exactly (zero residual noise). Returns the estimate offset after
/// `n` predict/update cycles.
pub fn kf_bias_response(mu: &Pose, cfg: &KalmanConfig, n: usize) -> Pose {
    let d = mu.dim();
    let zero = Pose::zeros(d);
    let mut state = KalmanState::new(zero.clone(), cfg.p0);
    for _ in 0..n {
        state = kf_predict(&state, &zero, cfg);
        state = kf_update(&state, mu, cfg).0;
    }
    state.l_r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(q: f64, r: f64) -> KalmanConfig {
        KalmanConfig {
            q,
            r,
            ..KalmanConfig::default()
        }
    }

    #[test]
    fn predict_shifts_by_delta() {
        let s = KalmanState::new(Pose::from([0.0, 0.0]), 1.0);
        let out = kf_predict(&s, &Pose::from([1.0, 0.0]), &cfg(0.0, 1.0));
        assert_eq!(out.l_r, Pose::from([1.0, 0.0]));
        assert_eq!(out.p, 1.0);
        let still = kf_predict(&s, &Pose::zeros(2), &cfg(0.0, 1.0));
        assert_eq!(still.l_r, s.l_r);
    }

    #[test]
    fn predict_grows_variance() {
        let c = cfg(0.01, 1.0);
        let s = KalmanState::new(Pose::zeros(2), 1.0);
        let s2 = kf_predict(&kf_predict(&s, &Pose::zeros(2), &c), &Pose::zeros(2), &c);
        assert!((s2.p - 1.02).abs() < 1e-12);
    }

    #[test]
    fn gain_examples() {
        let s = KalmanState::new(Pose::zeros(2), 1.0);
        assert_eq!(kf_update(&s, &Pose::zeros(2), &cfg(0.0, 1.0)).1, 0.5);
        let (_, g) = kf_update(&s, &Pose::zeros(2), &cfg(0.0, 1e12));
        assert!(g < 1e-11);
        let s3 = KalmanState::new(Pose::zeros(2), 3.0);
        let (out, g) = kf_update(&s3, &Pose::from([4.0, 8.0]), &cfg(0.0, 1.0));
        assert_eq!(g, 0.75);
        assert_eq!(out.l_r, Pose::from([3.0, 6.0]));
        assert_eq!(out.p, 0.75);
    }

    #[test]
    fn bias_response() {
        assert_eq!(
            kf_bias_response(&Pose::zeros(2), &cfg(0.01, 1.0), 1000),
            Pose::zeros(2)
        );
        let mu = Pose::from([10.0, 0.0]);
        let off = kf_bias_response(&mu, &cfg(0.01, 1.0), 1000);
        assert!((off.coords()[0] - 10.0).abs() < 0.1, "{off}");
        let ignored = kf_bias_response(&mu, &cfg(0.01, 1e12), 1000);
        assert!(ignored.norm() < 1e-6, "{ignored}");
    }
}
