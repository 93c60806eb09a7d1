//! Network-change detection from per-arm latency distributions.
//!
//! Each arm keeps a sliding window of its recent round-trip latencies. Once
//! the window is full the first fit becomes the arm's reference; afterwards
//! every new sample refits the window and compares it with the reference by
//! symmetrised Gaussian KL divergence. `consecutive_required` exceedances in
//! a row on one arm raise a [`ChangeEvent`].
//!
//! Samples far outside the expected spread (`spike_sigmas`) are left out of
//! a window's fit, up to a tenth of the window (at least two), so a lone
//! spike cannot hold the divergence high for a whole window. The reference measures spread by median absolute
//! deviation, the current window by the reference's own deviation.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

const MAD_TO_SIGMA: f64 = 1.482_602_218_505_602;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub enabled: bool,
    pub window: usize,
    pub consecutive_required: usize,
    /// Symmetrised KL threshold, nats.
    pub kl_threshold: f64,
    /// Variance floor applied before comparing fits, ms^2.
    pub var_floor: f64,
    /// Samples farther than this many standard deviations from the centre
    /// are left out of a window's fit, at most a tenth of the window but
    /// always up to two.
    pub spike_sigmas: f64,
    /// Whether an event clears the bandit's statistics.
    pub reset_bandit: bool,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            enabled: true,
            window: 50,
            consecutive_required: 3,
            kl_threshold: 0.5,
            var_floor: 1.0,
            spike_sigmas: 4.0,
            reset_bandit: true,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("need at least 2 samples, got {0}")]
    InsufficientData(usize),
    #[error("degenerate distribution: variance {0}")]
    Degenerate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSummary {
    pub mu: f64,
    pub var: f64,
    pub n: usize,
}

/// Sample mean and population variance.
pub fn gaussian_fit(samples: &[f64]) -> Result<GaussianSummary, DetectError> {
    let n = samples.len();
    if n < 2 {
        return Err(DetectError::InsufficientData(n));
    }
    let mu = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
    Ok(GaussianSummary { mu, var, n })
}

/// `KL(p || q)` between univariate Gaussians, nats.
pub fn kl_gaussian(p: &GaussianSummary, q: &GaussianSummary) -> Result<f64, DetectError> {
    for v in [p.var, q.var] {
        if v.is_nan() || v <= 0.0 {
            return Err(DetectError::Degenerate(v));
        }
    }
    let dm = p.mu - q.mu;
    let kl = 0.5 * (q.var / p.var).ln() + (p.var + dm * dm) / (2.0 * q.var) - 0.5;
    Ok(kl.max(0.0))
}

/// `(KL(p || q) + KL(q || p)) / 2`.
pub fn symmetric_kl(p: &GaussianSummary, q: &GaussianSummary) -> Result<f64, DetectError> {
    Ok(0.5 * (kl_gaussian(p, q)? + kl_gaussian(q, p)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub tick: u64,
    /// Arm whose counter reached the limit.
    pub arm: usize,
    /// Arms with a nonzero exceedance counter at the time of the event.
    pub arms: Vec<usize>,
    /// Latest divergence per arm, if the arm has a reference yet.
    pub kl: Vec<Option<f64>>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    windows: Vec<VecDeque<f64>>,
    references: Vec<Option<GaussianSummary>>,
    counters: Vec<usize>,
    last_kl: Vec<Option<f64>>,
    last_event_tick: Option<u64>,
}

impl DetectorState {
    pub fn new(k: usize) -> Self {
        DetectorState {
            windows: vec![VecDeque::new(); k],
            references: vec![None; k],
            counters: vec![0; k],
            last_kl: vec![None; k],
            last_event_tick: None,
        }
    }

    pub fn reference(&self, arm: usize) -> Option<&GaussianSummary> {
        self.references[arm].as_ref()
    }

    pub fn counter(&self, arm: usize) -> usize {
        self.counters[arm]
    }

    /// Divergence computed on the arm's latest sample, if any.
    pub fn last_kl(&self, arm: usize) -> Option<f64> {
        self.last_kl[arm]
    }

    pub fn last_event_tick(&self) -> Option<u64> {
        self.last_event_tick
    }

    /// Feeds one latency sample. Returns an event when `arm` has exceeded
    /// the threshold on `consecutive_required` samples in a row.
    pub fn observe(
        &mut self,
        arm: usize,
        latency_ms: f64,
        tick: u64,
        cfg: &DetectConfig,
    ) -> Option<ChangeEvent> {
        let window = &mut self.windows[arm];
        window.push_back(latency_ms);
        while window.len() > cfg.window {
            window.pop_front();
        }
        if window.len() < cfg.window {
            return None;
        }
        let samples: Vec<f64> = window.iter().copied().collect();
        let Some(reference) = self.references[arm] else {
            self.references[arm] = reference_fit(&samples, cfg);
            return None;
        };
        let scale = reference.var.max(cfg.var_floor).sqrt();
        let current = robust_fit(&samples, reference.mu, scale, cfg.spike_sigmas)?;
        let kl = symmetric_kl(
            &floored(current, cfg.var_floor),
            &floored(reference, cfg.var_floor),
        )
        .ok()?;
        self.last_kl[arm] = Some(kl);
        if kl > cfg.kl_threshold {
            self.counters[arm] += 1;
        } else {
            self.counters[arm] = 0;
        }
        if self.counters[arm] < cfg.consecutive_required {
            return None;
        }
        let event = ChangeEvent {
            tick,
            arm,
            arms: (0..self.counters.len())
                .filter(|&i| self.counters[i] > 0)
                .collect(),
            kl: self.last_kl.clone(),
            threshold: cfg.kl_threshold,
        };
        // Re-anchor every arm on its first full window after the change.
        let k = self.windows.len();
        *self = DetectorState {
            last_event_tick: Some(tick),
            ..DetectorState::new(k)
        };
        Some(event)
    }
}

fn floored(g: GaussianSummary, floor: f64) -> GaussianSummary {
    GaussianSummary {
        var: g.var.max(floor),
        ..g
    }
}

fn median(samples: &[f64]) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Fit that leaves out the samples lying more than `reject * scale` from
/// `center`, at most `max(2, n / 10)` of them, farthest first.
fn robust_fit(samples: &[f64], center: f64, scale: f64, reject: f64) -> Option<GaussianSummary> {
    let cap = (samples.len() / 10)
        .max(2)
        .min(samples.len().saturating_sub(2));
    let mut far: Vec<(usize, f64)> = samples
        .iter()
        .map(|x| (x - center).abs())
        .enumerate()
        .filter(|(_, dist)| *dist > reject * scale)
        .collect();
    far.sort_by(|a, b| b.1.total_cmp(&a.1));
    far.truncate(cap);
    if far.is_empty() {
        return gaussian_fit(samples).ok();
    }
    let rest: Vec<f64> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| !far.iter().any(|(j, _)| j == i))
        .map(|(_, x)| *x)
        .collect();
    gaussian_fit(&rest).ok()
}

fn reference_fit(samples: &[f64], cfg: &DetectConfig) -> Option<GaussianSummary> {
    let med = median(samples);
    let dev: Vec<f64> = samples.iter().map(|x| (x - med).abs()).collect();
    let scale = (MAD_TO_SIGMA * median(&dev)).max(cfg.var_floor.sqrt());
    robust_fit(samples, med, scale, cfg.spike_sigmas)
}
