//! Ground truth and the two sensor oracles.
//!
//! The VO oracle integrates noisy, biased per-tick displacements and so drifts
//! without bound. The DNN oracle returns absolute poses from a two-component
//! Gaussian mixture: accurate inliers and occasional heavy outliers.

use crate::config::RunConfig;
use crate::pose::Pose;
use crate::rng::SimRng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Hard speed cap, m/s.
    pub v_max: f64,
    /// Nominal speed, m/s.
    pub cruise_speed: f64,
    /// Per-tick speed noise, m/s.
    pub speed_sigma: f64,
    /// Per-tick heading random-walk step, rad.
    pub heading_sigma: f64,
    /// Curvature bound: heading change per tick is clamped to this, rad.
    pub max_turn: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            v_max: 15.0,
            cruise_speed: 10.0,
            speed_sigma: 0.5,
            heading_sigma: 0.03,
            max_turn: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoConfig {
    /// Per-axis Gaussian noise on each per-tick displacement, meters.
    pub delta_noise_sigma: f64,
    /// Constant per-tick displacement bias, meters. Missing trailing axes are zero.
    pub delta_bias: Vec<f64>,
}

impl Default for VoConfig {
    fn default() -> Self {
        VoConfig {
            delta_noise_sigma: 0.02,
            delta_bias: vec![0.01, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnnOracleConfig {
    /// Inlier per-axis standard deviation, meters.
    pub noise_sigma: f64,
    pub outlier_prob: f64,
    /// Outlier per-axis standard deviation, meters.
    pub outlier_sigma: f64,
    /// Constant additive bias on every sample, meters. Empty means none.
    pub bias: Vec<f64>,
}

impl Default for DnnOracleConfig {
    fn default() -> Self {
        DnnOracleConfig {
            noise_sigma: 0.5,
            outlier_prob: 0.05,
            outlier_sigma: 25.0,
            bias: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTrace {
    pub poses: Vec<Pose>,
}

impl GroundTruthTrace {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn max_step(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| w[1].distance(&w[0]))
            .fold(0.0, f64::max)
    }
}

/// Pads or validates a per-axis vector to dimension `d`.
pub(crate) fn axis_vector(v: &[f64], d: usize) -> Pose {
    let mut out = vec![0.0; d];
    for (o, x) in out.iter_mut().zip(v) {
        *o = *x;
    }
    Pose::new(out)
}

fn gaussian(rng: &mut SimRng, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    z * sigma
}

/// Smooth random path: heading random walk with bounded turn rate, speed
/// jitter around the cruise speed, clamped to `[0, v_max]`.
pub fn gen_trajectory(cfg: &RunConfig, rng: &mut SimRng) -> GroundTruthTrace {
    let t = &cfg.traj;
    let d = cfg.d;
    let dt_s = cfg.dt_ms / 1000.0;
    let n = cfg.n_steps;
    let mut poses = Vec::with_capacity(n);
    let mut pos = Pose::zeros(d);
    let mut heading: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    poses.push(pos.clone());
    for _ in 1..n {
        let turn = gaussian(rng, t.heading_sigma).clamp(-t.max_turn, t.max_turn);
        heading += turn;
        let speed = (t.cruise_speed + gaussian(rng, t.speed_sigma)).clamp(0.0, t.v_max);
        let step = speed * dt_s;
        let c = pos.coords_mut();
        if d >= 1 {
            c[0] += step * heading.cos();
        }
        if d >= 2 {
            c[1] += step * heading.sin();
        }
        poses.push(pos.clone());
    }
    GroundTruthTrace { poses }
}

/// Integrates ground-truth displacements plus bias and noise.
///
/// `L_beta(0) = L_gt(0)`; afterwards each tick adds the true displacement,
/// the bias vector and per-axis Gaussian noise.
pub fn vo_observe(gt: &GroundTruthTrace, cfg: &VoConfig, rng: &mut SimRng) -> Vec<Pose> {
    let Some(first) = gt.poses.first() else {
        return Vec::new();
    };
    let d = first.dim();
    let bias = axis_vector(&cfg.delta_bias, d);
    let mut out = Vec::with_capacity(gt.len());
    let mut cur = first.clone();
    out.push(cur.clone());
    for w in gt.poses.windows(2) {
        let mut delta = &w[1] - &w[0];
        delta += &bias;
        for c in delta.coords_mut() {
            *c += gaussian(rng, cfg.delta_noise_sigma);
        }
        cur += &delta;
        out.push(cur.clone());
    }
    out
}

/// One absolute-pose sample: inlier noise with probability `1 - outlier_prob`,
/// outlier noise otherwise. Always consumes `1 + d` draws.
pub fn dnn_observe(gt_pose: &Pose, cfg: &DnnOracleConfig, rng: &mut SimRng) -> Pose {
    let outlier = rng.random::<f64>() < cfg.outlier_prob;
    let sigma = if outlier {
        cfg.outlier_sigma
    } else {
        cfg.noise_sigma
    };
    let bias = axis_vector(&cfg.bias, gt_pose.dim());
    let mut out = gt_pose + &bias;
    for c in out.coords_mut() {
        *c += gaussian(rng, sigma);
    }
    out
}

/// DNN samples for every tick of a trace, so a capture at tick `t` sees the
/// same draw regardless of when the request is issued.
pub fn dnn_trace(gt: &GroundTruthTrace, cfg: &DnnOracleConfig, rng: &mut SimRng) -> Vec<Pose> {
    gt.poses.iter().map(|p| dnn_observe(p, cfg, rng)).collect()
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read trace {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("trace structure: {0}")]
    Structure(String),
}

/// Traces read from CSV. Optional columns that are absent yield `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrace {
    pub gt: GroundTruthTrace,
    pub vo: Option<Vec<Pose>>,
    pub dnn: Option<Vec<Pose>>,
}

const REQUIRED: [&str; 3] = ["t", "gt_x", "gt_y"];

/// Reads `t,gt_x,gt_y[,vo_x,vo_y][,dnn_x,dnn_y]`. Rows map 1:1 onto ticks.
pub fn load_trace_csv(path: impl AsRef<Path>) -> Result<LoadedTrace, ScenarioError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| ScenarioError::Io {
        path: path.to_owned(),
        source,
    })?;
    read_trace_csv(file)
}

pub fn read_trace_csv(reader: impl std::io::Read) -> Result<LoadedTrace, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ScenarioError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    if names.len() < 3 || names[..3] != REQUIRED {
        return Err(ScenarioError::Structure(format!(
            "header must start with t,gt_x,gt_y, got {}",
            names.join(",")
        )));
    }
    let find_pair = |prefix: &str| -> Result<Option<(usize, usize)>, ScenarioError> {
        let x = names.iter().position(|n| *n == format!("{prefix}_x"));
        let y = names.iter().position(|n| *n == format!("{prefix}_y"));
        match (x, y) {
            (Some(x), Some(y)) => Ok(Some((x, y))),
            (None, None) => Ok(None),
            _ => Err(ScenarioError::Structure(format!(
                "column pair {prefix}_x/{prefix}_y is incomplete"
            ))),
        }
    };
    // Any other column (for example the method columns of a run's trace.csv) is ignored.
    let vo_cols = find_pair("vo")?;
    let dnn_cols = find_pair("dnn")?;

    let mut gt = Vec::new();
    let mut vo = Vec::new();
    let mut dnn = Vec::new();
    for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| ScenarioError::Parse {
            line: e.position().map_or(row_idx as u64 + 2, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(row_idx as u64 + 2, |p| p.line());
        if rec.len() != names.len() {
            return Err(ScenarioError::Parse {
                line,
                message: format!("expected {} fields, found {}", names.len(), rec.len()),
            });
        }
        let cell = |i: usize| -> Result<Option<f64>, ScenarioError> {
            let raw = rec[i].trim();
            if raw.is_empty() {
                return Ok(None);
            }
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| ScenarioError::Parse {
                    line,
                    message: format!("column {}: not a finite number: {raw:?}", names[i]),
                })
        };
        let required = |i: usize| -> Result<f64, ScenarioError> {
            cell(i)?.ok_or_else(|| ScenarioError::Parse {
                line,
                message: format!("column {} is empty", names[i]),
            })
        };
        let t = required(0)?;
        if t != row_idx as f64 {
            return Err(ScenarioError::Structure(format!(
                "line {line}: tick {t} out of sequence, expected {row_idx}"
            )));
        }
        gt.push(Pose::new(vec![required(1)?, required(2)?]));
        let pair =
            |cols: Option<(usize, usize)>, dst: &mut Vec<Pose>| -> Result<(), ScenarioError> {
                if let Some((x, y)) = cols {
                    match (cell(x)?, cell(y)?) {
                        (Some(x), Some(y)) => dst.push(Pose::new(vec![x, y])),
                        (None, None) => {}
                        _ => {
                            return Err(ScenarioError::Structure(format!(
                                "line {line}: half-filled column pair {}/{}",
                                names[x], names[y]
                            )))
                        }
                    }
                }
                Ok(())
            };
        pair(vo_cols, &mut vo)?;
        pair(dnn_cols, &mut dnn)?;
    }
    if gt.is_empty() {
        return Err(ScenarioError::Structure("trace has no rows".into()));
    }
    let finish = |name: &str, cols: Option<(usize, usize)>, v: Vec<Pose>| match cols {
        None => Ok(None),
        Some(_) if v.len() == gt.len() => Ok(Some(v)),
        Some(_) => Err(ScenarioError::Structure(format!(
            "{name} column has {} values but gt has {}",
            v.len(),
            gt.len()
        ))),
    };
    let vo = finish("vo", vo_cols, vo)?;
    let dnn = finish("dnn", dnn_cols, dnn)?;
    Ok(LoadedTrace {
        gt: GroundTruthTrace { poses: gt },
        vo,
        dnn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn cfg_with(n: usize, f: impl FnOnce(&mut RunConfig)) -> RunConfig {
        let mut cfg = RunConfig {
            n_steps: n,
            ..RunConfig::default()
        };
        f(&mut cfg);
        cfg
    }

    #[test]
    fn zero_speed_stays_at_origin() {
        let cfg = cfg_with(50, |c| c.traj.v_max = 0.0);
        let gt = gen_trajectory(&cfg, &mut substream("trajectory", 1));
        assert_eq!(gt.len(), 50);
        assert!(gt.poses.iter().all(|p| *p == Pose::zeros(2)));
    }

    #[test]
    fn displacement_bound_default_seed_7() {
        let cfg = cfg_with(10_000, |_| {});
        let gt = gen_trajectory(&cfg, &mut substream("trajectory", 7));
        assert_eq!(gt.len(), 10_000);
        assert!(gt.max_step() <= 1.5 + 1e-12, "max step {}", gt.max_step());
        assert!(gt.max_step() > 0.5);
    }

    #[test]
    fn seeds_give_distinct_traces() {
        let cfg = cfg_with(20, |_| {});
        let a = gen_trajectory(&cfg, &mut substream("trajectory", 1));
        let b = gen_trajectory(&cfg, &mut substream("trajectory", 2));
        assert_ne!(a, b);
    }

    #[test]
    fn noiseless_vo_is_ground_truth() {
        let cfg = cfg_with(200, |_| {});
        let gt = gen_trajectory(&cfg, &mut substream("trajectory", 3));
        let vo_cfg = VoConfig {
            delta_noise_sigma: 0.0,
            delta_bias: vec![],
        };
        let vo = vo_observe(&gt, &vo_cfg, &mut substream("vo", 3));
        assert_eq!(vo, gt.poses);
    }

    #[test]
    fn vo_bias_accumulates_exactly() {
        // Stationary truth keeps every delta exactly representable.
        let gt = GroundTruthTrace {
            poses: vec![Pose::zeros(2); 1001],
        };
        let vo_cfg = VoConfig {
            delta_noise_sigma: 0.0,
            delta_bias: vec![0.01, 0.0],
        };
        let vo = vo_observe(&gt, &vo_cfg, &mut substream("vo", 0));
        let err = &vo[1000] - &gt.poses[1000];
        assert!((err.coords()[0] - 10.0).abs() < 1e-9, "{err}");
        assert_eq!(err.coords()[1], 0.0);
        // Noiseless bias: error magnitude never decreases.
        let errs: Vec<f64> = vo
            .iter()
            .zip(&gt.poses)
            .map(|(v, g)| v.distance(g))
            .collect();
        assert!(errs.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn vo_random_walk_magnitude() {
        // Pure-noise VO error after T ticks is N(0, sigma^2 T I_2); its mean
        // norm is sigma * sqrt(T) * sqrt(pi/2).
        let t = 10_000;
        let sigma = 0.02;
        let gt = GroundTruthTrace {
            poses: vec![Pose::zeros(2); t + 1],
        };
        let vo_cfg = VoConfig {
            delta_noise_sigma: sigma,
            delta_bias: vec![],
        };
        let mean_err: f64 = (0..100)
            .map(|seed| {
                let vo = vo_observe(&gt, &vo_cfg, &mut substream("vo", seed));
                vo[t].norm()
            })
            .sum::<f64>()
            / 100.0;
        let expected = sigma * (t as f64).sqrt() * (std::f64::consts::PI / 2.0).sqrt();
        assert!(mean_err < 3.0 * expected && mean_err > expected / 3.0);
        assert!(
            (mean_err / expected - 1.0).abs() < 0.2,
            "{mean_err} vs {expected}"
        );
    }

    #[test]
    fn dnn_exact_when_noiseless() {
        let cfg = DnnOracleConfig {
            noise_sigma: 0.0,
            outlier_prob: 0.0,
            outlier_sigma: 0.0,
            bias: vec![],
        };
        let gt = Pose::from([3.5, -1.25]);
        assert_eq!(dnn_observe(&gt, &cfg, &mut substream("dnn", 1)), gt);
    }

    #[test]
    fn dnn_all_outliers_stddev() {
        let cfg = DnnOracleConfig {
            noise_sigma: 0.5,
            outlier_prob: 1.0,
            outlier_sigma: 50.0,
            bias: vec![],
        };
        let mut rng = substream("dnn", 2);
        let gt = Pose::zeros(2);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| dnn_observe(&gt, &cfg, &mut rng).coords()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((sd / 50.0 - 1.0).abs() < 0.1, "sd = {sd}");
    }

    #[test]
    fn dnn_outlier_fraction() {
        let cfg = DnnOracleConfig {
            outlier_prob: 0.05,
            ..DnnOracleConfig::default()
        };
        let mut rng = substream("dnn", 3);
        let gt = Pose::zeros(2);
        let n = 10_000;
        let outliers = (0..n)
            .filter(|_| dnn_observe(&gt, &cfg, &mut rng).norm() > 5.0 * cfg.noise_sigma)
            .count();
        let frac = outliers as f64 / n as f64;
        assert!((frac - 0.05).abs() < 0.01, "frac = {frac}");
    }

    #[test]
    fn dnn_error_is_stationary() {
        let cfg = cfg_with(20_000, |_| {});
        let gt = gen_trajectory(&cfg, &mut substream("trajectory", 5));
        let dnn = dnn_trace(&gt, &cfg.dnn, &mut substream("dnn", 5));
        let errs: Vec<f64> = dnn
            .iter()
            .zip(&gt.poses)
            .map(|(a, g)| a.distance(g))
            .collect();
        let q = errs.len() / 4;
        let stats = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            let v = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / s.len() as f64;
            (m, v)
        };
        let (m1, v1) = stats(&errs[..q]);
        let (m4, v4) = stats(&errs[3 * q..]);
        assert!((m1 / m4 - 1.0).abs() < 0.15, "{m1} vs {m4}");
        assert!((v1 / v4 - 1.0).abs() < 0.15 * 2.0, "{v1} vs {v4}");
    }

    #[test]
    fn csv_three_rows() {
        let src = "t,gt_x,gt_y\n0,0,0\n1,1.5,0\n2,3,0.25\n";
        let tr = read_trace_csv(src.as_bytes()).unwrap();
        assert_eq!(tr.gt.len(), 3);
        assert_eq!(tr.gt.poses[2], Pose::from([3.0, 0.25]));
        assert!(tr.vo.is_none() && tr.dnn.is_none());
    }

    #[test]
    fn csv_all_columns() {
        let src = "t,gt_x,gt_y,vo_x,vo_y,dnn_x,dnn_y\n0,0,0,0,0,0.1,0\n1,1,0,1.1,0,0.9,0.2\n";
        let tr = read_trace_csv(src.as_bytes()).unwrap();
        assert_eq!(tr.vo.as_ref().unwrap()[1], Pose::from([1.1, 0.0]));
        assert_eq!(tr.dnn.as_ref().unwrap()[1], Pose::from([0.9, 0.2]));
    }

    #[test]
    fn csv_extra_columns_ignored() {
        let src = "t,gt_x,gt_y,fused_x,fused_y,err_fused\n0,0,0,0,0,0\n1,1,0,1.2,0,0.2\n";
        let tr = read_trace_csv(src.as_bytes()).unwrap();
        assert_eq!(tr.gt.len(), 2);
        assert!(tr.vo.is_none());
    }

    #[test]
    fn csv_bad_cell_cites_line() {
        let src = "t,gt_x,gt_y\n0,abc,0\n1,1,0\n";
        let err = read_trace_csv(src.as_bytes()).unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        assert!(err.to_string().starts_with("line 2"));
    }

    #[test]
    fn csv_length_mismatch_is_structural() {
        let src = "t,gt_x,gt_y,vo_x,vo_y\n0,0,0,0,0\n1,1,0,,\n";
        let err = read_trace_csv(src.as_bytes()).unwrap_err();
        assert!(matches!(err, ScenarioError::Structure(_)), "{err}");
    }

    #[test]
    fn csv_incomplete_pair_is_structural() {
        let src = "t,gt_x,gt_y,vo_x\n0,0,0,0\n";
        let err = read_trace_csv(src.as_bytes()).unwrap_err();
        assert!(matches!(err, ScenarioError::Structure(_)), "{err}");
    }

    #[test]
    fn csv_missing_file() {
        let err = load_trace_csv("/nonexistent/trace.csv").unwrap_err();
        assert!(matches!(err, ScenarioError::Io { .. }));
    }
}
