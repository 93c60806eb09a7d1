//! Split points, network conditions and round-trip latency sampling.
//!
//! A round trip costs on-vehicle compute, payload transfer, RSU compute and
//! a network RTT with truncated-Gaussian jitter:
//!
//! ```text
//! dt = av_compute + 1000 * payload / bandwidth + rsu_compute + max(0, N(rtt, jitter^2))
//! ```

use crate::rng::SimRng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPoint {
    pub id: usize,
    pub av_compute_ms: f64,
    pub payload_bytes: u64,
    pub rsu_compute_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCondition {
    pub bandwidth_bytes_per_s: f64,
    pub base_rtt_ms: f64,
    pub jitter_sigma_ms: f64,
}

impl Default for NetworkCondition {
    fn default() -> Self {
        NetworkCondition {
            bandwidth_bytes_per_s: 1e7,
            base_rtt_ms: 20.0,
            jitter_sigma_ms: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_tick: u64,
    #[serde(flatten)]
    pub condition: NetworkCondition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionSchedule {
    pub segments: Vec<Segment>,
}

impl Default for ConditionSchedule {
    fn default() -> Self {
        ConditionSchedule::constant(NetworkCondition::default())
    }
}

impl ConditionSchedule {
    pub fn constant(condition: NetworkCondition) -> Self {
        ConditionSchedule {
            segments: vec![Segment {
                start_tick: 0,
                condition,
            }],
        }
    }

    pub fn two_segment(
        first: NetworkCondition,
        switch_tick: u64,
        second: NetworkCondition,
    ) -> Self {
        ConditionSchedule {
            segments: vec![
                Segment {
                    start_tick: 0,
                    condition: first,
                },
                Segment {
                    start_tick: switch_tick,
                    condition: second,
                },
            ],
        }
    }

    /// Index of the segment in force at `tick`.
    pub fn segment_index(&self, tick: u64) -> usize {
        self.segments
            .partition_point(|s| s.start_tick <= tick)
            .saturating_sub(1)
    }
}

/// The condition of the last segment starting at or before `tick`.
pub fn condition_at(schedule: &ConditionSchedule, tick: u64) -> NetworkCondition {
    schedule.segments[schedule.segment_index(tick)].condition
}

/// Latency without the RTT jitter.
pub fn deterministic_latency_ms(split: &SplitPoint, cond: &NetworkCondition) -> f64 {
    split.av_compute_ms
        + 1000.0 * split.payload_bytes as f64 / cond.bandwidth_bytes_per_s
        + split.rsu_compute_ms
}

pub fn latency_sample(split: &SplitPoint, cond: &NetworkCondition, rng: &mut SimRng) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let rtt = (cond.base_rtt_ms + cond.jitter_sigma_ms * z).max(0.0);
    deterministic_latency_ms(split, cond) + rtt
}

// Standard normal pdf and cdf for the truncated-RTT mean.
fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn big_phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

// Chebyshev-fitted erfc (Numerical Recipes `erfcc`), fractional error < 1.2e-7.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98
                                    + t * (1.488_515_87
                                        + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Mean of `max(0, N(mu, sigma^2))`.
pub fn rectified_normal_mean(mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mu.max(0.0);
    }
    let a = mu / sigma;
    mu * big_phi(a) + sigma * phi(a)
}

/// Expected round-trip latency for one arm under one condition.
pub fn expected_latency_ms(split: &SplitPoint, cond: &NetworkCondition) -> f64 {
    deterministic_latency_ms(split, cond)
        + rectified_normal_mean(cond.base_rtt_ms, cond.jitter_sigma_ms)
}

/// Arm with the lowest expected latency; lowest id wins ties.
pub fn optimal_split(splits: &[SplitPoint], cond: &NetworkCondition) -> usize {
    let mut best = 0;
    let mut best_lat = f64::INFINITY;
    for (i, s) in splits.iter().enumerate() {
        let l = expected_latency_ms(s, cond);
        if l < best_lat {
            best = i;
            best_lat = l;
        }
    }
    best
}

/// Default five-way split table: deeper splits trade payload and RSU work
/// for on-vehicle compute.
pub fn default_splits() -> Vec<SplitPoint> {
    let av = [5.0, 15.0, 30.0, 60.0, 120.0];
    let payload = [4_000_000, 1_000_000, 250_000, 60_000, 10_000];
    let rsu = [120.0, 60.0, 30.0, 15.0, 5.0];
    (0..5)
        .map(|i| SplitPoint {
            id: i,
            av_compute_ms: av[i],
            payload_bytes: payload[i],
            rsu_compute_ms: rsu[i],
        })
        .collect()
}

/// Writes the split table as CSV for auditing.
pub fn write_splits_csv(splits: &[SplitPoint], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "id,av_compute_ms,payload_bytes,rsu_compute_ms")?;
    for s in splits {
        writeln!(
            out,
            "{},{},{},{}",
            s.id, s.av_compute_ms, s.payload_bytes, s.rsu_compute_ms
        )?;
    }
    Ok(())
}

pub fn write_schedule_csv(
    schedule: &ConditionSchedule,
    mut out: impl Write,
) -> std::io::Result<()> {
    writeln!(
        out,
        "start_tick,bandwidth_bytes_per_s,base_rtt_ms,jitter_sigma_ms"
    )?;
    for s in &schedule.segments {
        let c = &s.condition;
        writeln!(
            out,
            "{},{},{},{}",
            s.start_tick, c.bandwidth_bytes_per_s, c.base_rtt_ms, c.jitter_sigma_ms
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn cond(bw: f64, rtt: f64, jitter: f64) -> NetworkCondition {
        NetworkCondition {
            bandwidth_bytes_per_s: bw,
            base_rtt_ms: rtt,
            jitter_sigma_ms: jitter,
        }
    }

    fn split(av: f64, payload: u64, rsu: f64) -> SplitPoint {
        SplitPoint {
            id: 0,
            av_compute_ms: av,
            payload_bytes: payload,
            rsu_compute_ms: rsu,
        }
    }

    #[test]
    fn schedule_lookup() {
        let a = cond(1e7, 10.0, 0.0);
        let b = cond(1e5, 10.0, 0.0);
        let single = ConditionSchedule::constant(a);
        assert_eq!(condition_at(&single, 0), a);
        assert_eq!(condition_at(&single, 1_000_000), a);
        let two = ConditionSchedule::two_segment(a, 100, b);
        assert_eq!(condition_at(&two, 99), a);
        assert_eq!(condition_at(&two, 100), b);
        assert_eq!(condition_at(&two, 5000), b);
    }

    #[test]
    fn latency_examples() {
        let mut rng = substream("net", 1);
        let s = split(10.0, 1_000_000, 20.0);
        assert_eq!(latency_sample(&s, &cond(1e6, 30.0, 0.0), &mut rng), 1060.0);
        let s0 = split(10.0, 0, 20.0);
        assert_eq!(latency_sample(&s0, &cond(1e6, 30.0, 0.0), &mut rng), 60.0);
        let slow = deterministic_latency_ms(&s, &cond(1e6, 0.0, 0.0));
        let fast = deterministic_latency_ms(&s, &cond(2e6, 0.0, 0.0));
        assert_eq!(slow - fast, 500.0);
    }

    #[test]
    fn latency_never_below_deterministic_part() {
        let mut rng = substream("net", 2);
        let s = split(10.0, 1000, 20.0);
        let c = cond(1e6, 5.0, 50.0);
        let floor = deterministic_latency_ms(&s, &c);
        assert!((0..10_000).all(|_| latency_sample(&s, &c, &mut rng) >= floor));
    }

    #[test]
    fn slope_in_payload_matches_bandwidth() {
        // Least-squares slope of latency on payload size.
        let c = cond(2e6, 20.0, 5.0);
        let mut rng = substream("net", 3);
        let n = 10_000;
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let payload = (i % 100) as u64 * 10_000;
                (
                    payload as f64,
                    latency_sample(&split(5.0, payload, 5.0), &c, &mut rng),
                )
            })
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let expected = 1000.0 / 2e6;
        assert!((slope / expected - 1.0).abs() < 0.02, "slope {slope}");
    }

    #[test]
    fn stationary_halves() {
        let c = cond(1e7, 20.0, 5.0);
        let s = &default_splits()[2];
        let mut rng = substream("net", 4);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| latency_sample(s, &c, &mut rng))
            .collect();
        let (a, b) = xs.split_at(5000);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let se = (var(a) / 5000.0 + var(b) / 5000.0).sqrt();
        assert!((mean(a) - mean(b)).abs() < 3.0 * se);
    }

    #[test]
    fn optimal_arm_depends_on_bandwidth() {
        // Brute-force expectation by Monte-Carlo, checked against the closed form.
        let splits = default_splits();
        let fast = cond(1e7, 20.0, 5.0);
        let slow = cond(1e5, 20.0, 5.0);
        let mc_best = |c: &NetworkCondition| {
            let mut rng = substream("net", 9);
            let means: Vec<f64> = splits
                .iter()
                .map(|s| {
                    (0..4000)
                        .map(|_| latency_sample(s, c, &mut rng))
                        .sum::<f64>()
                        / 4000.0
                })
                .collect();
            means
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        assert_eq!(optimal_split(&splits, &fast), mc_best(&fast));
        assert_eq!(optimal_split(&splits, &slow), mc_best(&slow));
        assert_ne!(optimal_split(&splits, &fast), optimal_split(&splits, &slow));
        assert_eq!(optimal_split(&splits, &fast), 3);
        assert_eq!(optimal_split(&splits, &slow), 4);
    }

    #[test]
    fn rectified_mean_limits() {
        // mpmath: 20 Φ(4) + 5 φ(4), -5 Φ(-0.5) + 10 φ(-0.5)
        assert!((rectified_normal_mean(20.0, 5.0) - 20.000_035_726_292_16).abs() < 1e-6);
        assert!((rectified_normal_mean(-5.0, 10.0) - 1.977_965_574_013_06).abs() < 1e-6);
        assert!((rectified_normal_mean(0.0, 1.0) - phi(0.0)).abs() < 1e-9);
        assert_eq!(rectified_normal_mean(-3.0, 0.0), 0.0);
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        write_splits_csv(&default_splits(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().nth(1).unwrap().starts_with("0,5,4000000,120"));
    }
}
