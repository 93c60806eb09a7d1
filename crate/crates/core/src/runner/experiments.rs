use super::report::{Event, MethodTotals, RunReport};
use super::{run_simulation, RunError};
use crate::bandit::regret_bound;
use crate::config::RunConfig;
use crate::netsim::{expected_latency_ms, optimal_split};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("baseline {0} total is not positive; reduction undefined")]
    UndefinedReduction(&'static str),
}

/// Percent reduction of the fused total against each baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reductions {
    pub vs_vo: f64,
    pub vs_dnn: f64,
    pub vs_kalman: f64,
}

impl Reductions {
    /// Two-decimal presentation values.
    pub fn rounded(&self) -> Reductions {
        let r = |x: f64| (x * 100.0).round() / 100.0;
        Reductions {
            vs_vo: r(self.vs_vo),
            vs_dnn: r(self.vs_dnn),
            vs_kalman: r(self.vs_kalman),
        }
    }
}

/// `100 (1 - fused / baseline)` for each baseline.
pub fn compare_methods(totals: &MethodTotals) -> Result<Reductions, CompareError> {
    let red = |baseline: f64, name| {
        if baseline > 0.0 {
            Ok(100.0 * (1.0 - totals.fused_total / baseline))
        } else {
            Err(CompareError::UndefinedReduction(name))
        }
    };
    Ok(Reductions {
        vs_vo: red(totals.vo_total, "vo")?,
        vs_dnn: red(totals.dnn_total, "dnn")?,
        vs_kalman: red(totals.kalman_total, "kalman")?,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub latency_ms: f64,
    pub samples: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Median VO-only error over the same ticks, for reference.
    pub vo_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    pub buckets: Vec<BucketStats>,
}

fn run_seeds<T: Send>(
    seeds: &[u64],
    f: impl Fn(u64) -> Result<T, RunError> + Sync,
) -> Result<Vec<T>, RunError> {
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = seeds.iter().map(|&seed| s.spawn(move || f(seed))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    })
}

/// Fused-error distribution per constant latency, pooled over the counted
/// ticks of every seed. The bandit is bypassed and split 0 is always used.
pub fn sweep_latency(
    cfg: &RunConfig,
    buckets_ms: &[f64],
    seeds: &[u64],
) -> Result<SweepReport, RunError> {
    let mut buckets = Vec::with_capacity(buckets_ms.len());
    for &latency_ms in buckets_ms {
        let runs = run_seeds(seeds, |seed| {
            let c = RunConfig {
                seed,
                fixed_latency_ms: Some(latency_ms),
                ..cfg.clone()
            };
            run_simulation(&c)
        })?;
        let counted = || {
            runs.iter()
                .flat_map(|r| r.rows.iter().filter(|row| !row.warmup))
        };
        let mut fused: Vec<f64> = counted().map(|row| row.err_fused).collect();
        let mut vo: Vec<f64> = counted().map(|row| row.err_vo).collect();
        fused.sort_by(f64::total_cmp);
        vo.sort_by(f64::total_cmp);
        let stats = if fused.is_empty() {
            BucketStats {
                latency_ms,
                samples: 0,
                min: f64::NAN,
                q1: f64::NAN,
                median: f64::NAN,
                q3: f64::NAN,
                max: f64::NAN,
                vo_median: f64::NAN,
            }
        } else {
            BucketStats {
                latency_ms,
                samples: fused.len(),
                min: fused[0],
                q1: quantile(&fused, 0.25),
                median: quantile(&fused, 0.5),
                q3: quantile(&fused, 0.75),
                max: fused[fused.len() - 1],
                vo_median: quantile(&vo, 0.5),
            }
        };
        buckets.push(stats);
    }
    Ok(SweepReport {
        seeds: seeds.to_vec(),
        buckets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub start_tick: u64,
    pub optimal_arm: usize,
    pub expected_latency_ms: Vec<f64>,
    pub rounds: usize,
    pub optimal_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: u64,
    pub segments: Vec<SegmentStats>,
    pub change_ticks: Vec<u64>,
    /// Change events before the first schedule switch.
    pub false_alarms: usize,
    /// Per switch: arrivals from the switch to the first change event.
    pub detection_delay_arrivals: Vec<Option<usize>>,
    /// Per switch: request index at which the post-switch detection
    /// happened (first request issued at or after the event tick).
    pub detection_round: Vec<Option<usize>>,
    /// Per switch: rounds after detection until a block of `block` rounds
    /// first reaches 80 % optimal pulls.
    pub readaptation_rounds: Vec<Option<usize>>,
    /// Per switch: rounds after the switch until a block of `block` rounds
    /// first reaches 80 % optimal pulls, whether or not a detection happened.
    pub readaptation_from_switch: Vec<Option<usize>>,
    /// Per switch: optimal fraction over rounds `[det + 4 block, det + 5 block)`.
    pub fifth_block_fraction: Vec<Option<f64>>,
    /// Cumulative expected-latency regret per round, ms.
    pub regret_curve: Vec<f64>,
    /// `(n, bound in ms)` for the stationary prefix.
    pub prefix_bound: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditEvalReport {
    pub block: usize,
    /// Every segment has the same optimal arm.
    pub degenerate_schedule: bool,
    pub optimal_arms: Vec<usize>,
    pub seeds: Vec<SeedEval>,
}

impl BanditEvalReport {
    pub fn mean_fifth_block_fraction(&self, switch: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .seeds
            .iter()
            .filter_map(|s| s.fifth_block_fraction.get(switch).copied().flatten())
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

struct Round {
    tick: u64,
    arm: usize,
}

fn evaluate_seed(cfg: &RunConfig, report: &RunReport, block: usize) -> SeedEval {
    let segs = &cfg.net.segments;
    let optimal: Vec<usize> = segs
        .iter()
        .map(|s| optimal_split(&cfg.splits, &s.condition))
        .collect();
    let rounds: Vec<Round> = report
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Request { tick, arm, .. } => Some(Round {
                tick: *tick,
                arm: *arm,
            }),
            _ => None,
        })
        .collect();
    let arrival_ticks: Vec<u64> = report
        .events
        .iter()
        .filter(|e| matches!(e, Event::Arrival { .. }))
        .map(Event::tick)
        .collect();
    let change_ticks = report.summary.change_ticks.clone();

    let segments = segs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let end = segs.get(i + 1).map_or(u64::MAX, |n| n.start_tick);
            let in_seg: Vec<&Round> = rounds
                .iter()
                .filter(|r| r.tick >= s.start_tick && r.tick < end)
                .collect();
            let hits = in_seg.iter().filter(|r| r.arm == optimal[i]).count();
            SegmentStats {
                start_tick: s.start_tick,
                optimal_arm: optimal[i],
                expected_latency_ms: cfg
                    .splits
                    .iter()
                    .map(|sp| expected_latency_ms(sp, &s.condition))
                    .collect(),
                rounds: in_seg.len(),
                optimal_fraction: if in_seg.is_empty() {
                    0.0
                } else {
                    hits as f64 / in_seg.len() as f64
                },
            }
        })
        .collect();

    let first_switch = segs.get(1).map_or(u64::MAX, |s| s.start_tick);
    let false_alarms = change_ticks.iter().filter(|&&t| t < first_switch).count();

    let mut detection_delay_arrivals = Vec::new();
    let mut detection_round = Vec::new();
    let mut readaptation_rounds = Vec::new();
    let mut readaptation_from_switch = Vec::new();
    let mut fifth_block_fraction = Vec::new();
    for (i, s) in segs.iter().enumerate().skip(1) {
        let end = segs.get(i + 1).map_or(u64::MAX, |n| n.start_tick);
        let det = change_ticks
            .iter()
            .copied()
            .find(|&t| t >= s.start_tick && t < end);
        detection_delay_arrivals.push(det.map(|d| {
            arrival_ticks
                .iter()
                .filter(|&&a| a >= s.start_tick && a <= d)
                .count()
        }));
        let det_round = det.and_then(|d| rounds.iter().position(|r| r.tick >= d));
        detection_round.push(det_round);
        let hit = |r: &Round| r.arm == optimal[i] && r.tick < end;
        let readapt = |start: usize| {
            let tail = &rounds[start..];
            (block..=tail.len()).find(|&e| {
                let n = tail[e - block..e].iter().filter(|r| hit(r)).count();
                n as f64 >= 0.8 * block as f64
            })
        };
        readaptation_rounds.push(det_round.and_then(readapt));
        let switch_round = rounds.iter().position(|r| r.tick >= s.start_tick);
        readaptation_from_switch.push(switch_round.and_then(readapt));
        fifth_block_fraction.push(det_round.and_then(|d0| {
            let lo = d0 + 4 * block;
            let hi = d0 + 5 * block;
            (hi <= rounds.len())
                .then(|| rounds[lo..hi].iter().filter(|r| hit(r)).count() as f64 / block as f64)
        }));
    }

    let regret_curve = report.summary.regret_curve.clone();
    let prefix_rounds = rounds.iter().filter(|r| r.tick < first_switch).count() as u64;
    let cond0 = &segs[0].condition;
    let means: Vec<f64> = cfg
        .splits
        .iter()
        .map(|sp| expected_latency_ms(sp, cond0))
        .collect();
    let best = means.iter().copied().fold(f64::INFINITY, f64::min);
    let gaps_s: Vec<f64> = means.iter().map(|m| (m - best) / 1000.0).collect();
    let var_s = (cond0.jitter_sigma_ms / 1000.0)
        .powi(2)
        .max(f64::MIN_POSITIVE);
    let variances = vec![var_s; means.len()];
    let mut prefix_bound = Vec::new();
    let mut n = 10u64;
    while n <= prefix_rounds {
        if let Ok(b) = regret_bound(&variances, &gaps_s, n) {
            prefix_bound.push((n, 1000.0 * b));
        }
        n *= 10;
    }

    SeedEval {
        seed: report.seed,
        segments,
        change_ticks,
        false_alarms,
        detection_delay_arrivals,
        detection_round,
        readaptation_rounds,
        readaptation_from_switch,
        fifth_block_fraction,
        regret_curve,
        prefix_bound,
    }
}

/// Convergence and readaptation statistics over several seeds. `block` is
/// the round count used for the readaptation windows (normally the bandit
/// window `W`).
pub fn bandit_eval(
    cfg: &RunConfig,
    seeds: &[u64],
    block: usize,
) -> Result<BanditEvalReport, RunError> {
    cfg.validate()?;
    let optimal_arms: Vec<usize> = cfg
        .net
        .segments
        .iter()
        .map(|s| optimal_split(&cfg.splits, &s.condition))
        .collect();
    let degenerate_schedule =
        optimal_arms.len() >= 2 && optimal_arms.iter().all(|&a| a == optimal_arms[0]);
    let block = block.max(1);
    let seeds = run_seeds(seeds, |seed| {
        let c = RunConfig {
            seed,
            ..cfg.clone()
        };
        let report = run_simulation(&c)?;
        Ok(evaluate_seed(&c, &report, block))
    })?;
    Ok(BanditEvalReport {
        block,
        degenerate_schedule,
        optimal_arms,
        seeds,
    })
}
