//! Discrete-event engine.
//!
//! One loop advances the VO tick by tick; the RSU round trip is modelled as
//! a single in-flight request whose arrival tick is fixed when it is issued.
//! At an arrival the stale DNN pose is moved forward by the VO displacement
//! since capture and fused, the Kalman and DNN-only baselines consume the
//! same sample, the bandit is rewarded and the detector sees the latency.
//! The next request is issued on the same tick.

mod experiments;
mod report;

pub use experiments::{
    bandit_eval, compare_methods, sweep_latency, BanditEvalReport, BucketStats, CompareError,
    Reductions, SeedEval, SegmentStats, SweepReport,
};
pub use report::{
    read_report, recompute_summary, write_events_csv, write_outputs, write_trace_csv, Event,
    MethodTotals, RunReport, Summary, TickRow,
};

use crate::bandit::{BanditState, RewardSignal};
use crate::changedetect::DetectorState;
use crate::config::{ConfigError, RunConfig};
use crate::fusion::{
    fuse_absolute, fusion_weight, propagate_relative, stale_correction, FusionError, FusionState,
};
use crate::kalman::{kf_predict, kf_update, KalmanState};
use crate::netsim::{condition_at, expected_latency_ms, latency_sample};
use crate::pose::{ticks_for_latency, Pose};
use crate::rng::{streams, substream};
use crate::scenario::{dnn_trace, gen_trajectory, load_trace_csv, vo_observe, ScenarioError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("fusion failed at tick {tick}: {source}")]
    Fusion { tick: u64, source: FusionError },
}

impl RunError {
    /// True when the run was rejected before it started.
    pub fn is_config(&self) -> bool {
        matches!(self, RunError::Config(_))
    }
}

/// A collaborative-inference request awaiting its result.
#[derive(Debug, Clone, PartialEq)]
pub struct InFlightRequest {
    pub seq: u64,
    pub arm: usize,
    pub capture_tick: u64,
    pub arrival_tick: u64,
    pub dt_ms: f64,
    pub l_alpha: Pose,
}

/// Ground truth plus the two sensor streams a run consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub gt: Vec<Pose>,
    pub vo: Vec<Pose>,
    pub dnn: Vec<Pose>,
}

/// Generates or loads the inputs for `cfg`, each from its own substream.
pub fn prepare_inputs(cfg: &RunConfig) -> Result<Inputs, RunError> {
    cfg.validate()?;
    let seed = cfg.seed;
    let (gt, vo, dnn) = match &cfg.trace_csv {
        None => {
            let gt = gen_trajectory(cfg, &mut substream(streams::TRAJECTORY, seed));
            (gt, None, None)
        }
        Some(path) => {
            let mut t = load_trace_csv(path)?;
            let dim = t.gt.poses[0].dim();
            if dim != cfg.d {
                return Err(ConfigError::Invalid(format!(
                    "trace has dimension {dim}, config d = {}",
                    cfg.d
                ))
                .into());
            }
            let n = cfg.n_steps.min(t.gt.len());
            t.gt.poses.truncate(n);
            if let Some(v) = t.vo.as_mut() {
                v.truncate(n);
            }
            if let Some(v) = t.dnn.as_mut() {
                v.truncate(n);
            }
            (t.gt, t.vo, t.dnn)
        }
    };
    let vo = vo.unwrap_or_else(|| vo_observe(&gt, &cfg.vo, &mut substream(streams::VO, seed)));
    let dnn = dnn.unwrap_or_else(|| dnn_trace(&gt, &cfg.dnn, &mut substream(streams::DNN, seed)));
    Ok(Inputs {
        gt: gt.poses,
        vo,
        dnn,
    })
}

pub fn run_simulation(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let inputs = prepare_inputs(cfg)?;
    run_with_inputs(cfg, &inputs)
}

/// Runs the event loop over pre-built inputs.
pub fn run_with_inputs(cfg: &RunConfig, inputs: &Inputs) -> Result<RunReport, RunError> {
    cfg.validate()?;
    let Inputs { gt, vo, dnn } = inputs;
    let n = gt.len();
    let fusion_err = |tick: u64| move |source| RunError::Fusion { tick, source };

    let mut net_rng = substream(streams::NET, cfg.seed);
    let mut bandit = BanditState::new(cfg.splits.len(), &cfg.bandit);
    let mut detector = DetectorState::new(cfg.splits.len());
    let mut fused = FusionState::new(gt[0].clone());
    let mut kalman = KalmanState::new(gt[0].clone(), cfg.kalman.p0);
    let mut dnn_only = gt[0].clone();
    let mut inflight: Option<InFlightRequest> = None;
    let mut seq = 0u64;
    let mut seen_arrival = false;

    let mut rows = Vec::with_capacity(n);
    let mut events = Vec::new();

    for i in 0..n {
        let tick = i as u64;
        if i > 0 {
            let delta = &vo[i] - &vo[i - 1];
            fused.l_r =
                propagate_relative(&fused.l_r, &vo[i], &vo[i - 1]).map_err(fusion_err(tick))?;
            kalman = kf_predict(&kalman, &delta, &cfg.kalman);
        }

        let mut arrived = false;
        if let Some(req) = inflight.take_if(|r| r.arrival_tick == tick) {
            let c = req.capture_tick as usize;
            let deltas: Vec<Pose> = (c + 1..=i).map(|j| &vo[j] - &vo[j - 1]).collect();
            let corrected = stale_correction(&req.l_alpha, &deltas);
            let u = fusion_weight(req.dt_ms, &cfg.fusion);
            fused.l_r = fuse_absolute(&corrected, &fused.l_r, u).map_err(fusion_err(tick))?;
            fused.last_fuse_tick = Some(tick);
            let measurement = if cfg.kalman.stale_corrected {
                &corrected
            } else {
                &req.l_alpha
            };
            kalman = kf_update(&kalman, measurement, &cfg.kalman).0;
            dnn_only = corrected;

            let error = fused.l_r.distance(&gt[i]);
            let reward = match cfg.bandit.reward {
                RewardSignal::FusedError => -error,
                RewardSignal::Latency => -req.dt_ms / 1000.0,
            };
            events.push(Event::Arrival {
                tick,
                seq: req.seq,
                arm: req.arm,
                capture_tick: req.capture_tick,
                dt_ms: req.dt_ms,
                u,
                reward,
            });
            if cfg.fixed_latency_ms.is_none() {
                bandit.update(req.arm, reward, tick);
                if cfg.detect.enabled {
                    if let Some(ev) = detector.observe(req.arm, req.dt_ms, tick, &cfg.detect) {
                        if cfg.detect.reset_bandit {
                            bandit.reset();
                        }
                        events.push(Event::Change {
                            tick,
                            arm: ev.arm,
                            arms: ev.arms,
                            kl: ev.kl,
                            threshold: ev.threshold,
                            bandit_reset: cfg.detect.reset_bandit,
                        });
                    }
                }
            }
            arrived = true;
            seen_arrival = true;
        }

        if inflight.is_none() {
            let cond = condition_at(&cfg.net, tick);
            let (arm, forced, indices, dt_ms) = match cfg.fixed_latency_ms {
                Some(l) => (0, false, Vec::new(), l),
                None => {
                    let sel = bandit.select(&cfg.bandit);
                    let l = latency_sample(&cfg.splits[sel.arm], &cond, &mut net_rng);
                    (sel.arm, sel.forced, sel.indices, l)
                }
            };
            let arrival_tick = tick.saturating_add(ticks_for_latency(dt_ms, cfg.dt_ms));
            let best_expected = cfg
                .splits
                .iter()
                .map(|s| expected_latency_ms(s, &cond))
                .fold(f64::INFINITY, f64::min);
            events.push(Event::Request {
                tick,
                seq,
                arm,
                dt_ms,
                arrival_tick,
                forced,
                indices,
                expected_gap_ms: expected_latency_ms(&cfg.splits[arm], &cond) - best_expected,
            });
            inflight = Some(InFlightRequest {
                seq,
                arm,
                capture_tick: tick,
                arrival_tick,
                dt_ms,
                l_alpha: dnn[i].clone(),
            });
            seq += 1;
        }

        rows.push(TickRow::new(
            tick,
            &gt[i],
            &vo[i],
            &fused.l_r,
            &kalman.l_r,
            &dnn_only,
            arrived,
            !seen_arrival,
        ));
    }

    let mut report = RunReport {
        live: false,
        seed: cfg.seed,
        d: cfg.d,
        dt_ms: cfg.dt_ms,
        n_arms: cfg.splits.len(),
        rows,
        events,
        summary: Summary::default(),
    };
    report.summary = recompute_summary(&report);
    Ok(report)
}
