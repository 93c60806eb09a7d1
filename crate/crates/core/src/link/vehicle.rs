//! Vehicle side of the live link.
//!
//! The tick loop runs on the calling thread against the wall clock. A worker
//! thread owns the socket and performs one round trip per job; the two talk
//! only through a pair of channels. The tick loop never blocks on the
//! network, so VO rows keep coming while the RSU is slow or gone.

use super::wire::{read_response, write_request, InferRequest};
use crate::bandit::{BanditState, RewardSignal};
use crate::changedetect::DetectorState;
use crate::config::RunConfig;
use crate::fusion::{
    fuse_absolute, fusion_weight, propagate_relative, stale_correction, FusionState,
};
use crate::kalman::{kf_predict, kf_update, KalmanState};
use crate::netsim::SplitPoint;
use crate::pose::Pose;
use crate::runner::{
    prepare_inputs, recompute_summary, Event, RunError, RunReport, Summary, TickRow,
};
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleOptions {
    pub connect_timeout_ms: u64,
    /// Give up on a response after this long.
    pub response_timeout_ms: u64,
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
}

impl Default for VehicleOptions {
    fn default() -> Self {
        VehicleOptions {
            connect_timeout_ms: 500,
            response_timeout_ms: 30_000,
            backoff_initial_ms: 50,
            backoff_max_ms: 2_000,
        }
    }
}

/// Timing facts about a live run that the report schema does not carry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LiveStats {
    /// Actual start of each tick minus its scheduled start, ms.
    pub tick_lateness_ms: Vec<f64>,
    /// Largest |interval between consecutive tick starts - dt|, ms.
    pub max_interval_jitter_ms: f64,
    pub connects: u32,
    pub failed_requests: u32,
    pub dropped_responses: u32,
}

#[derive(Debug, Clone)]
pub struct LiveRun {
    pub report: RunReport,
    pub stats: LiveStats,
}

struct Job {
    seq: u64,
    split: SplitPoint,
    tick: u64,
    captured: Instant,
}

enum Outcome {
    Response { seq: u64, pose: Pose, rtt_ms: f64 },
    Failed { seq: u64, reason: String },
    Connected,
}

type Conn = (BufReader<TcpStream>, BufWriter<TcpStream>);

fn connect(addrs: &[SocketAddr], opts: &VehicleOptions) -> std::io::Result<Conn> {
    let timeout = Duration::from_millis(opts.connect_timeout_ms);
    let mut last = None;
    for addr in addrs {
        match TcpStream::connect_timeout(addr, timeout) {
            Ok(s) => {
                s.set_nodelay(true)?;
                s.set_read_timeout(Some(Duration::from_millis(opts.response_timeout_ms)))?;
                return Ok((BufReader::new(s.try_clone()?), BufWriter::new(s)));
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| std::io::Error::other("no address")))
}

fn round_trip(conn: &mut Conn, job: &Job) -> Result<Pose, String> {
    let now_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64);
    let req = InferRequest {
        seq: job.seq,
        split_id: job.split.id,
        tick: job.tick,
        capture_ts_ms: now_ms,
        payload_len: job.split.payload_bytes,
    };
    write_request(&mut conn.1, &req).map_err(|e| format!("send: {e}"))?;
    loop {
        match read_response(&mut conn.0) {
            Ok(Some(rsp)) if rsp.seq == job.seq => return Ok(rsp.pose),
            Ok(Some(rsp)) => warn!(
                "vehicle: dropping response for seq {} (want {})",
                rsp.seq, job.seq
            ),
            Ok(None) => return Err("rsu closed the connection".into()),
            Err(e) => return Err(format!("receive: {e}")),
        }
    }
}

/// Owns the socket. Sleeps the on-vehicle compute time, sends, waits.
/// While disconnected it retries with exponential backoff, holding the job
/// until a connection attempt has been made.
fn worker(addrs: Vec<SocketAddr>, opts: VehicleOptions, jobs: Receiver<Job>, out: Sender<Outcome>) {
    let mut conn: Option<Conn> = None;
    let mut backoff = Duration::from_millis(opts.backoff_initial_ms);
    let mut retry_at = Instant::now();
    for job in jobs {
        if conn.is_none() {
            thread::sleep(retry_at.saturating_duration_since(Instant::now()));
            match connect(&addrs, &opts) {
                Ok(c) => {
                    conn = Some(c);
                    backoff = Duration::from_millis(opts.backoff_initial_ms);
                    let _ = out.send(Outcome::Connected);
                }
                Err(e) => {
                    retry_at = Instant::now() + backoff;
                    backoff = (backoff * 2).min(Duration::from_millis(opts.backoff_max_ms));
                    let reason = format!("connect: {e}");
                    if out
                        .send(Outcome::Failed {
                            seq: job.seq,
                            reason,
                        })
                        .is_err()
                    {
                        return;
                    }
                    continue;
                }
            }
        }
        thread::sleep(Duration::from_secs_f64(job.split.av_compute_ms / 1000.0));
        let outcome = match round_trip(conn.as_mut().unwrap(), &job) {
            Ok(pose) => Outcome::Response {
                seq: job.seq,
                pose,
                rtt_ms: job.captured.elapsed().as_secs_f64() * 1000.0,
            },
            Err(reason) => {
                conn = None;
                retry_at = Instant::now();
                Outcome::Failed {
                    seq: job.seq,
                    reason,
                }
            }
        };
        if out.send(outcome).is_err() {
            return;
        }
    }
}

struct Pending {
    seq: u64,
    arm: usize,
    capture_tick: u64,
    event: usize,
}

/// Runs the fusion loop in real time against an RSU at `rsu_addr`.
///
/// Same loop as the simulator with two substitutions: Δt is the measured
/// round trip, and with the fused-error reward the bandit is fed the
/// residual `-|corrected L_α - L_r|` since ground truth is not observable
/// live. Ground truth is still used to fill the error columns.
pub fn vehicle_client(
    rsu_addr: impl ToSocketAddrs,
    cfg: &RunConfig,
    opts: &VehicleOptions,
) -> Result<LiveRun, RunError> {
    let inputs = prepare_inputs(cfg)?;
    let addrs: Vec<SocketAddr> = rsu_addr
        .to_socket_addrs()
        .map_err(|e| crate::config::ConfigError::Invalid(format!("rsu address: {e}")))?
        .collect();
    let (gt, vo) = (&inputs.gt, &inputs.vo);
    let n = gt.len();
    let dt = Duration::from_secs_f64(cfg.dt_ms / 1000.0);

    let (job_tx, job_rx) = mpsc::channel::<Job>();
    let (out_tx, out_rx) = mpsc::channel::<Outcome>();
    {
        let opts = opts.clone();
        thread::spawn(move || worker(addrs, opts, job_rx, out_tx));
    }

    let mut bandit = BanditState::new(cfg.splits.len(), &cfg.bandit);
    let mut detector = DetectorState::new(cfg.splits.len());
    let mut fused = FusionState::new(gt[0].clone());
    let mut kalman = KalmanState::new(gt[0].clone(), cfg.kalman.p0);
    let mut dnn_only = gt[0].clone();
    let mut pending: Option<Pending> = None;
    let mut seq = 0u64;
    let mut seen_arrival = false;
    let mut link_down = false;
    let mut stats = LiveStats::default();
    let mut rows = Vec::with_capacity(n);
    let mut events = Vec::new();
    let mut tick_starts = Vec::with_capacity(n);

    let start = Instant::now();
    for i in 0..n {
        let tick = i as u64;
        let scheduled = start + dt * i as u32;
        thread::sleep(scheduled.saturating_duration_since(Instant::now()));
        let now = Instant::now();
        tick_starts.push(now);
        stats
            .tick_lateness_ms
            .push(now.saturating_duration_since(scheduled).as_secs_f64() * 1000.0);

        if i > 0 {
            let delta = &vo[i] - &vo[i - 1];
            fused.l_r = propagate_relative(&fused.l_r, &vo[i], &vo[i - 1])
                .map_err(|source| RunError::Fusion { tick, source })?;
            kalman = kf_predict(&kalman, &delta, &cfg.kalman);
        }

        let mut arrived = false;
        loop {
            let outcome = match out_rx.try_recv() {
                Ok(o) => o,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    warn!("vehicle: link worker exited");
                    break;
                }
            };
            match outcome {
                Outcome::Connected => {
                    stats.connects += 1;
                    if link_down {
                        info!("vehicle: link restored at tick {tick}");
                    }
                    link_down = false;
                }
                Outcome::Failed { seq: s, reason } => {
                    let Some(p) = pending.take_if(|p| p.seq == s) else {
                        stats.dropped_responses += 1;
                        continue;
                    };
                    stats.failed_requests += 1;
                    if let Event::Request {
                        arrival_tick,
                        dt_ms,
                        ..
                    } = &mut events[p.event]
                    {
                        *arrival_tick = u64::MAX;
                        *dt_ms = (tick - p.capture_tick) as f64 * cfg.dt_ms;
                    }
                    if !link_down {
                        warn!("vehicle: link down at tick {tick}: {reason}");
                        events.push(Event::Gap { tick, reason });
                        link_down = true;
                    }
                }
                Outcome::Response {
                    seq: s,
                    pose,
                    rtt_ms,
                } => {
                    let Some(p) = pending.take_if(|p| p.seq == s) else {
                        warn!("vehicle: dropping response for unknown seq {s}");
                        stats.dropped_responses += 1;
                        continue;
                    };
                    if let Event::Request {
                        arrival_tick,
                        dt_ms,
                        ..
                    } = &mut events[p.event]
                    {
                        *arrival_tick = tick;
                        *dt_ms = rtt_ms;
                    }
                    let c = p.capture_tick as usize;
                    let deltas: Vec<Pose> = (c + 1..=i).map(|j| &vo[j] - &vo[j - 1]).collect();
                    let corrected = stale_correction(&pose, &deltas);
                    let residual = corrected.distance(&fused.l_r);
                    let u = fusion_weight(rtt_ms, &cfg.fusion);
                    fused.l_r = fuse_absolute(&corrected, &fused.l_r, u)
                        .map_err(|source| RunError::Fusion { tick, source })?;
                    fused.last_fuse_tick = Some(tick);
                    let measurement = if cfg.kalman.stale_corrected {
                        &corrected
                    } else {
                        &pose
                    };
                    kalman = kf_update(&kalman, measurement, &cfg.kalman).0;
                    dnn_only = corrected;

                    let reward = match cfg.bandit.reward {
                        RewardSignal::FusedError => -residual,
                        RewardSignal::Latency => -rtt_ms / 1000.0,
                    };
                    events.push(Event::Arrival {
                        tick,
                        seq: s,
                        arm: p.arm,
                        capture_tick: p.capture_tick,
                        dt_ms: rtt_ms,
                        u,
                        reward,
                    });
                    if cfg.fixed_latency_ms.is_none() {
                        bandit.update(p.arm, reward, tick);
                        if cfg.detect.enabled {
                            if let Some(ev) = detector.observe(p.arm, rtt_ms, tick, &cfg.detect) {
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
            }
        }

        if pending.is_none() {
            let (arm, forced, indices) = match cfg.fixed_latency_ms {
                Some(_) => (0, false, Vec::new()),
                None => {
                    let sel = bandit.select(&cfg.bandit);
                    (sel.arm, sel.forced, sel.indices)
                }
            };
            let job = Job {
                seq,
                split: cfg.splits[arm].clone(),
                tick,
                captured: now,
            };
            if job_tx.send(job).is_ok() {
                debug!("vehicle: request {seq} on split {arm} at tick {tick}");
                pending = Some(Pending {
                    seq,
                    arm,
                    capture_tick: tick,
                    event: events.len(),
                });
                events.push(Event::Request {
                    tick,
                    seq,
                    arm,
                    dt_ms: 0.0,
                    arrival_tick: u64::MAX,
                    forced,
                    indices,
                    expected_gap_ms: 0.0,
                });
                seq += 1;
            }
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

    if let Some(p) = pending {
        if let Event::Request { dt_ms, .. } = &mut events[p.event] {
            *dt_ms = (n as u64 - p.capture_tick) as f64 * cfg.dt_ms;
        }
    }
    stats.max_interval_jitter_ms = tick_starts
        .windows(2)
        .map(|w| ((w[1] - w[0]).as_secs_f64() * 1000.0 - cfg.dt_ms).abs())
        .fold(0.0, f64::max);

    let mut report = RunReport {
        live: true,
        seed: cfg.seed,
        d: cfg.d,
        dt_ms: cfg.dt_ms,
        n_arms: cfg.splits.len(),
        rows,
        events,
        summary: Summary::default(),
    };
    report.summary = recompute_summary(&report);
    Ok(LiveRun { report, stats })
}

/// Mean measured round trip per split over `rounds` sequential requests
/// each, captured at tick 0.
pub fn probe_splits(
    rsu_addr: impl ToSocketAddrs,
    splits: &[SplitPoint],
    rounds: usize,
    opts: &VehicleOptions,
) -> std::io::Result<Vec<f64>> {
    let addrs: Vec<SocketAddr> = rsu_addr.to_socket_addrs()?.collect();
    let mut conn = connect(&addrs, opts)?;
    let mut seq = 0;
    let mut means = Vec::with_capacity(splits.len());
    for split in splits {
        let mut total = 0.0;
        for _ in 0..rounds {
            let job = Job {
                seq,
                split: split.clone(),
                tick: 0,
                captured: Instant::now(),
            };
            thread::sleep(Duration::from_secs_f64(split.av_compute_ms / 1000.0));
            round_trip(&mut conn, &job).map_err(std::io::Error::other)?;
            total += job.captured.elapsed().as_secs_f64() * 1000.0;
            seq += 1;
        }
        means.push(total / rounds as f64);
    }
    Ok(means)
}
