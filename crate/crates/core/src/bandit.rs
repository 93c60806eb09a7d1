//! Sliding-window UCB1-Normal split-point selection.
//!
//! Rewards are maximised. Each arm's index is its windowed mean plus a
//! variance-scaled bonus:
//!
//! ```text
//! Φ_i = X̄_i + sqrt(16 σ̂²_i ln(t - 1) / (n_i - 1))
//! ```
//!
//! where `X̄_i`, `σ̂²_i` (population variance) and `n_i` are taken over the
//! last `W` rounds. Arms with fewer than two windowed samples have no index
//! and are always played first. With forced exploration on, an arm is also
//! played while its lifetime pull count is below `⌈8 ln t⌉`, `t` counting
//! all rounds.
//!
//! In the index, `t - 1` is the number of rounds the statistics cover:
//! `min(rounds since reset, W)`, or the rounds since reset when `W = ∞`.
//! A reset clears the windowed statistics only; lifetime counts stay.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::VecDeque;
use thiserror::Error;

/// Which signal the bandit maximises, negated so that larger is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardSignal {
    /// `-(Euclidean fused error at the arrival tick)`.
    #[default]
    FusedError,
    /// `-(round-trip latency in seconds)`.
    Latency,
}

/// Sliding window length; `None` keeps the full history.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window(pub Option<usize>);

impl Window {
    pub const INFINITE: Window = Window(None);

    pub fn finite(w: usize) -> Self {
        Window(Some(w))
    }
}

impl Serialize for Window {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(w) => s.serialize_u64(w as u64),
            None => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Window {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Window(Some(n as usize))),
            Raw::S(s) if s == "inf" => Ok(Window(None)),
            Raw::S(s) => Err(serde::de::Error::custom(format!(
                "window must be an integer or \"inf\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditConfig {
    pub window_w: Window,
    pub forced_exploration: bool,
    pub reward: RewardSignal,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig {
            window_w: Window::finite(200),
            forced_exploration: true,
            reward: RewardSignal::FusedError,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BanditError {
    #[error("forced exploration required: index undefined for count {count}, t {t}")]
    ForcedExploration { count: usize, t: u64 },
    #[error("degenerate gap: arm {0} has zero gap but is not the unique optimum")]
    DegenerateGap(usize),
    #[error("bound needs n >= 2, got {0}")]
    HorizonTooShort(u64),
    #[error("variances and gaps have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// `mean + sqrt(16 var ln(t - 1) / (count - 1))`.
pub fn ucb_index(mean: f64, var: f64, count: usize, t: u64) -> Result<f64, BanditError> {
    if count < 2 || t < 2 {
        return Err(BanditError::ForcedExploration { count, t });
    }
    let bonus = (16.0 * var.max(0.0) * ((t - 1) as f64).ln() / (count - 1) as f64).sqrt();
    Ok(mean + bonus)
}

/// Welford accumulator. Mean and population variance over pushed values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ArmStats {
    pub count: usize,
    pub mean: f64,
    m2: f64,
}

impl ArmStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut s = ArmStats::default();
        for v in values {
            s.push(v);
        }
        s
    }

    /// Population variance, clamped at zero.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tick: u64,
    pub arm: usize,
    pub reward: f64,
}

/// Outcome of one selection, with the index of every arm that has one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub arm: usize,
    pub forced: bool,
    pub indices: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    k: usize,
    window: Option<usize>,
    history: VecDeque<Observation>,
    stats: Vec<ArmStats>,
    pulls: Vec<u64>,
    rounds_since_reset: u64,
    total_rounds: u64,
    resets: u64,
}

impl BanditState {
    pub fn new(k: usize, cfg: &BanditConfig) -> Self {
        assert!(k >= 1, "bandit needs at least one arm");
        BanditState {
            k,
            window: cfg.window_w.0,
            history: VecDeque::new(),
            stats: vec![ArmStats::default(); k],
            pulls: vec![0; k],
            rounds_since_reset: 0,
            total_rounds: 0,
            resets: 0,
        }
    }

    pub fn arms(&self) -> usize {
        self.k
    }

    /// Cached windowed statistics per arm.
    pub fn stats(&self) -> &[ArmStats] {
        &self.stats
    }

    pub fn windowed_counts(&self) -> Vec<usize> {
        self.stats.iter().map(|s| s.count).collect()
    }

    pub fn history(&self) -> impl Iterator<Item = &Observation> {
        self.history.iter()
    }

    pub fn rounds_since_reset(&self) -> u64 {
        self.rounds_since_reset
    }

    /// Lifetime pulls per arm.
    pub fn pulls(&self) -> &[u64] {
        &self.pulls
    }

    pub fn total_rounds(&self) -> u64 {
        self.total_rounds
    }

    pub fn resets(&self) -> u64 {
        self.resets
    }

    /// Rounds the current statistics cover: `t - 1` in the index.
    fn covered_rounds(&self) -> u64 {
        match self.window {
            Some(w) => self.rounds_since_reset.min(w as u64),
            None => self.rounds_since_reset,
        }
    }

    pub fn select(&self, cfg: &BanditConfig) -> Selection {
        let indices: Vec<Option<f64>> = self
            .stats
            .iter()
            .map(|s| ucb_index(s.mean, s.variance(), s.count, self.covered_rounds() + 1).ok())
            .collect();
        if self.k == 1 {
            return Selection {
                arm: 0,
                forced: false,
                indices,
            };
        }
        let t = self.total_rounds + 1;
        let threshold = (8.0 * (t as f64).ln()).ceil() as u64;
        let forced = (0..self.k)
            .filter(|&i| {
                self.stats[i].count < 2 || (cfg.forced_exploration && self.pulls[i] < threshold)
            })
            .min_by_key(|&i| (self.stats[i].count, self.pulls[i], i));
        if let Some(arm) = forced {
            return Selection {
                arm,
                forced: true,
                indices,
            };
        }
        let mut best = 0;
        let mut best_phi = f64::NEG_INFINITY;
        for (i, phi) in indices.iter().enumerate() {
            let phi = phi.unwrap_or(f64::INFINITY);
            if phi > best_phi {
                best = i;
                best_phi = phi;
            }
        }
        Selection {
            arm: best,
            forced: false,
            indices,
        }
    }

    pub fn select_split(&self, cfg: &BanditConfig) -> usize {
        self.select(cfg).arm
    }

    /// Records a reward and slides the window.
    pub fn update(&mut self, arm: usize, reward: f64, tick: u64) {
        assert!(arm < self.k, "arm {arm} out of range");
        self.history.push_back(Observation { tick, arm, reward });
        self.rounds_since_reset += 1;
        self.total_rounds += 1;
        self.pulls[arm] += 1;
        let evicted = match self.window {
            Some(w) if self.history.len() > w => self.history.pop_front().map(|o| o.arm),
            _ => None,
        };
        match evicted {
            Some(e) if e == arm => self.recompute(arm),
            Some(e) => {
                self.recompute(e);
                self.stats[arm].push(reward);
            }
            None => self.stats[arm].push(reward),
        }
        if self.window.is_none() {
            // Statistics are cumulative; the raw log is only needed for windows.
            self.history.clear();
        }
    }

    fn recompute(&mut self, arm: usize) {
        self.stats[arm] = ArmStats::from_values(
            self.history
                .iter()
                .filter(|o| o.arm == arm)
                .map(|o| o.reward),
        );
    }

    /// Forgets the windowed statistics; used when the network changes.
    pub fn reset(&mut self) {
        self.history.clear();
        self.stats = vec![ArmStats::default(); self.k];
        self.rounds_since_reset = 0;
        self.resets += 1;
    }
}

/// Simulation-known arm means and their gaps to the best arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    pub means: Vec<f64>,
    pub best: f64,
    pub gaps: Vec<f64>,
}

impl RegretLedger {
    pub fn new(means: Vec<f64>) -> Self {
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let gaps = means.iter().map(|m| best - m).collect();
        RegretLedger { means, best, gaps }
    }

    pub fn optimal_arm(&self) -> usize {
        self.gaps.iter().position(|g| *g == 0.0).unwrap_or(0)
    }
}

/// `n -> Σ_i Δ_i T_i(n)` from realised pull counts; entry `j` covers the
/// first `j + 1` selections.
pub fn pseudo_regret(ledger: &RegretLedger, selections: &[usize]) -> Vec<f64> {
    let mut acc = 0.0;
    selections
        .iter()
        .map(|&arm| {
            acc += ledger.gaps[arm];
            acc
        })
        .collect()
}

/// `256 ln n Σ_{i≠*} σ²_i/Δ_i + (8 ln n + π⁴/30) Σ_j Δ_j`.
pub fn regret_bound(variances: &[f64], gaps: &[f64], n: u64) -> Result<f64, BanditError> {
    if variances.len() != gaps.len() {
        return Err(BanditError::LengthMismatch(variances.len(), gaps.len()));
    }
    if n < 2 {
        return Err(BanditError::HorizonTooShort(n));
    }
    let mut seen_optimal = false;
    for (i, g) in gaps.iter().enumerate() {
        if *g == 0.0 {
            if seen_optimal {
                return Err(BanditError::DegenerateGap(i));
            }
            seen_optimal = true;
        }
    }
    let ln_n = (n as f64).ln();
    let variance_term: f64 = variances
        .iter()
        .zip(gaps)
        .filter(|(_, g)| **g > 0.0)
        .map(|(v, g)| v / g)
        .sum();
    let gap_sum: f64 = gaps.iter().sum();
    let pi4_30 = std::f64::consts::PI.powi(4) / 30.0;
    Ok(256.0 * ln_n * variance_term + (8.0 * ln_n + pi4_30) * gap_sum)
}

/// Gaussian-reward arms for exercising the policy outside the simulator.
pub mod testbed {
    use super::*;
    use crate::rng::SimRng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[derive(Debug, Clone, PartialEq)]
    pub struct GaussianArms {
        pub means: Vec<f64>,
        pub sigmas: Vec<f64>,
    }

    impl GaussianArms {
        pub fn draw(&self, arm: usize, rng: &mut SimRng) -> f64 {
            let z: f64 = rng.sample(StandardNormal);
            self.means[arm] + self.sigmas[arm] * z
        }

        pub fn ledger(&self) -> RegretLedger {
            RegretLedger::new(self.means.clone())
        }
    }

    /// Plays `n` rounds; `arms_at(round)` gives the reward model in force.
    /// Returns the selected arm per round.
    pub fn play<'a>(
        cfg: &BanditConfig,
        n: usize,
        mut arms_at: impl FnMut(usize) -> &'a GaussianArms,
        rng: &mut SimRng,
    ) -> Vec<usize> {
        let k = arms_at(0).means.len();
        let mut state = BanditState::new(k, cfg);
        (0..n)
            .map(|round| {
                let arms = arms_at(round);
                let arm = state.select_split(cfg);
                let r = arms.draw(arm, rng);
                state.update(arm, r, round as u64);
                arm
            })
            .collect()
    }

    /// Fraction of `selections[range]` equal to `arm`.
    pub fn fraction(selections: &[usize], arm: usize) -> f64 {
        if selections.is_empty() {
            return 0.0;
        }
        selections.iter().filter(|&&a| a == arm).count() as f64 / selections.len() as f64
    }
}
