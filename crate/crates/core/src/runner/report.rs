use super::experiments::{compare_methods, Reductions};
use crate::pose::Pose;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

/// One simulated tick: positions and per-method Euclidean errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRow {
    pub tick: u64,
    pub gt: Pose,
    pub vo: Pose,
    pub fused: Pose,
    pub kalman: Pose,
    pub dnn: Pose,
    pub err_vo: f64,
    pub err_dnn: f64,
    pub err_kalman: f64,
    pub err_fused: f64,
    /// A DNN result was fused on this tick.
    pub arrival: bool,
    /// Before the first arrival; not counted in totals.
    pub warmup: bool,
}

impl TickRow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tick: u64,
        gt: &Pose,
        vo: &Pose,
        fused: &Pose,
        kalman: &Pose,
        dnn: &Pose,
        arrival: bool,
        warmup: bool,
    ) -> Self {
        TickRow {
            tick,
            gt: gt.clone(),
            vo: vo.clone(),
            fused: fused.clone(),
            kalman: kalman.clone(),
            dnn: dnn.clone(),
            err_vo: vo.distance(gt),
            err_dnn: dnn.distance(gt),
            err_kalman: kalman.distance(gt),
            err_fused: fused.distance(gt),
            arrival,
            warmup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Request {
        tick: u64,
        seq: u64,
        arm: usize,
        dt_ms: f64,
        arrival_tick: u64,
        forced: bool,
        /// UCB index per arm at selection time; `None` while undefined.
        indices: Vec<Option<f64>>,
        /// Expected latency of the chosen arm minus the best arm's, ms.
        expected_gap_ms: f64,
    },
    Arrival {
        tick: u64,
        seq: u64,
        arm: usize,
        capture_tick: u64,
        dt_ms: f64,
        u: f64,
        reward: f64,
    },
    Change {
        tick: u64,
        arm: usize,
        arms: Vec<usize>,
        kl: Vec<Option<f64>>,
        threshold: f64,
        bandit_reset: bool,
    },
    /// Live runs only: the link to the RSU was down.
    Gap { tick: u64, reason: String },
}

impl Event {
    pub fn tick(&self) -> u64 {
        match self {
            Event::Request { tick, .. }
            | Event::Arrival { tick, .. }
            | Event::Change { tick, .. }
            | Event::Gap { tick, .. } => *tick,
        }
    }
}

/// Summed Euclidean errors over the counted ticks, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodTotals {
    pub vo_total: f64,
    pub dnn_total: f64,
    pub kalman_total: f64,
    pub fused_total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub totals: MethodTotals,
    /// Percent reductions of the fused error; absent when a baseline is 0.
    pub reductions: Option<Reductions>,
    pub counted_ticks: usize,
    pub warmup_ticks: usize,
    pub requests: usize,
    pub arrivals: usize,
    pub arm_pulls: Vec<u64>,
    /// Cumulative expected-latency regret per request, ms.
    pub regret_curve: Vec<f64>,
    pub change_ticks: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub live: bool,
    pub seed: u64,
    pub d: usize,
    pub dt_ms: f64,
    pub n_arms: usize,
    pub rows: Vec<TickRow>,
    pub events: Vec<Event>,
    pub summary: Summary,
}

/// Derives the summary from rows and events alone.
pub fn recompute_summary(report: &RunReport) -> Summary {
    let mut totals = MethodTotals::default();
    let mut counted = 0;
    for row in report.rows.iter().filter(|r| !r.warmup) {
        totals.vo_total += row.err_vo;
        totals.dnn_total += row.err_dnn;
        totals.kalman_total += row.err_kalman;
        totals.fused_total += row.err_fused;
        counted += 1;
    }
    let mut arm_pulls = vec![0; report.n_arms];
    let mut regret_curve = Vec::new();
    let mut change_ticks = Vec::new();
    let mut arrivals = 0;
    let mut regret = 0.0;
    for ev in &report.events {
        match ev {
            Event::Request {
                arm,
                expected_gap_ms,
                ..
            } => {
                arm_pulls[*arm] += 1;
                regret += expected_gap_ms;
                regret_curve.push(regret);
            }
            Event::Arrival { .. } => arrivals += 1,
            Event::Change { tick, .. } => change_ticks.push(*tick),
            Event::Gap { .. } => {}
        }
    }
    Summary {
        totals,
        reductions: compare_methods(&totals).ok(),
        counted_ticks: counted,
        warmup_ticks: report.rows.len() - counted,
        requests: regret_curve.len(),
        arrivals,
        arm_pulls,
        regret_curve,
        change_ticks,
    }
}

fn axis_names(d: usize) -> Vec<String> {
    (0..d)
        .map(|i| match i {
            0 => "x".to_string(),
            1 => "y".to_string(),
            2 => "z".to_string(),
            _ => format!("a{i}"),
        })
        .collect()
}

/// Per-tick CSV. The leading `t,gt_*,vo_*,dnn_*` columns can be replayed
/// as a scenario trace.
pub fn write_trace_csv(report: &RunReport, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let axes = axis_names(report.d);
    let mut header = vec!["t".to_string()];
    for method in ["gt", "vo", "dnn", "fused", "kalman"] {
        header.extend(axes.iter().map(|a| format!("{method}_{a}")));
    }
    header.extend(
        [
            "err_vo",
            "err_dnn",
            "err_kalman",
            "err_fused",
            "arrival",
            "warmup",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for row in &report.rows {
        let mut rec = vec![row.tick.to_string()];
        for p in [&row.gt, &row.vo, &row.dnn, &row.fused, &row.kalman] {
            rec.extend(p.coords().iter().map(f64::to_string));
        }
        rec.extend([row.err_vo, row.err_dnn, row.err_kalman, row.err_fused].map(|e| e.to_string()));
        rec.push(u8::from(row.arrival).to_string());
        rec.push(u8::from(row.warmup).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One line per event: `tick,kind,seq,arm,dt_ms,detail`.
pub fn write_events_csv(report: &RunReport, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tick", "kind", "seq", "arm", "dt_ms", "detail"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for ev in &report.events {
        let rec: [String; 6] = match ev {
            Event::Request {
                tick,
                seq,
                arm,
                dt_ms,
                arrival_tick,
                forced,
                indices,
                ..
            } => [
                tick.to_string(),
                "request".into(),
                seq.to_string(),
                arm.to_string(),
                dt_ms.to_string(),
                format!(
                    "arrival_tick={arrival_tick} forced={forced} phi=[{}]",
                    indices
                        .iter()
                        .map(|p| opt(*p))
                        .collect::<Vec<_>>()
                        .join(";")
                ),
            ],
            Event::Arrival {
                tick,
                seq,
                arm,
                capture_tick,
                dt_ms,
                u,
                reward,
            } => [
                tick.to_string(),
                "arrival".into(),
                seq.to_string(),
                arm.to_string(),
                dt_ms.to_string(),
                format!("capture_tick={capture_tick} u={u} reward={reward}"),
            ],
            Event::Change {
                tick,
                arm,
                arms,
                kl,
                threshold,
                bandit_reset,
            } => [
                tick.to_string(),
                "change".into(),
                String::new(),
                arm.to_string(),
                String::new(),
                format!(
                    "arms={arms:?} kl=[{}] threshold={threshold} bandit_reset={bandit_reset}",
                    kl.iter().map(|k| opt(*k)).collect::<Vec<_>>().join(";")
                ),
            ],
            Event::Gap { tick, reason } => [
                tick.to_string(),
                "gap".into(),
                String::new(),
                String::new(),
                String::new(),
                reason.clone(),
            ],
        };
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json`, `trace.csv` and `events.csv` into `dir`.
pub fn write_outputs(report: &RunReport, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = BufWriter::new(File::create(dir.join("report.json"))?);
    serde_json::to_writer(json, report)?;
    let io = |e: csv::Error| std::io::Error::other(e);
    write_trace_csv(report, BufWriter::new(File::create(dir.join("trace.csv"))?)).map_err(io)?;
    write_events_csv(
        report,
        BufWriter::new(File::create(dir.join("events.csv"))?),
    )
    .map_err(io)?;
    Ok(())
}

pub fn read_report(path: &Path) -> std::io::Result<RunReport> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}
