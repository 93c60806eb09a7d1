//! Run configuration: one TOML document, every field defaulted.

use crate::bandit::BanditConfig;
use crate::changedetect::DetectConfig;
use crate::fusion::FusionConfig;
use crate::kalman::KalmanConfig;
use crate::netsim::{default_splits, ConditionSchedule, SplitPoint};
use crate::scenario::{DnnOracleConfig, TrajectoryConfig, VoConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Pose dimension.
    pub d: usize,
    pub n_steps: usize,
    /// Tick period, ms.
    pub dt_ms: f64,
    pub traj: TrajectoryConfig,
    pub fusion: FusionConfig,
    pub vo: VoConfig,
    pub dnn: DnnOracleConfig,
    pub kalman: KalmanConfig,
    pub net: ConditionSchedule,
    pub splits: Vec<SplitPoint>,
    pub bandit: BanditConfig,
    pub detect: DetectConfig,
    /// Replace sampled latencies by this constant and always use split 0.
    pub fixed_latency_ms: Option<f64>,
    /// Replay ground truth (and optional VO/DNN columns) from a CSV trace.
    pub trace_csv: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            d: 2,
            n_steps: 10_000,
            dt_ms: 100.0,
            traj: TrajectoryConfig::default(),
            fusion: FusionConfig::default(),
            vo: VoConfig::default(),
            dnn: DnnOracleConfig::default(),
            kalman: KalmanConfig::default(),
            net: ConditionSchedule::default(),
            splits: default_splits(),
            bandit: BanditConfig::default(),
            detect: DetectConfig::default(),
            fixed_latency_ms: None,
            trace_csv: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

fn nonneg(name: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        invalid(format!("{name} must be finite and >= 0, got {v}"))
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        invalid(format!("{name} must be finite and > 0, got {v}"))
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative trace paths are resolved against the config file.
        if let (Some(trace), Some(dir)) = (&cfg.trace_csv, path.parent()) {
            if trace.is_relative() {
                cfg.trace_csv = Some(dir.join(trace));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_steps < 1 {
            return invalid("n_steps must be >= 1");
        }
        if self.d < 1 {
            return invalid("d must be >= 1");
        }
        positive("dt_ms", self.dt_ms)?;

        let t = &self.traj;
        nonneg("traj.v_max", t.v_max)?;
        nonneg("traj.cruise_speed", t.cruise_speed)?;
        nonneg("traj.speed_sigma", t.speed_sigma)?;
        nonneg("traj.heading_sigma", t.heading_sigma)?;
        nonneg("traj.max_turn", t.max_turn)?;

        positive("fusion.k", self.fusion.k)?;
        nonneg("fusion.dt0_ms", self.fusion.dt0_ms)?;

        nonneg("vo.delta_noise_sigma", self.vo.delta_noise_sigma)?;
        if self.vo.delta_bias.len() > self.d || self.vo.delta_bias.iter().any(|b| !b.is_finite()) {
            return invalid("vo.delta_bias must hold at most d finite values");
        }

        nonneg("dnn.noise_sigma", self.dnn.noise_sigma)?;
        nonneg("dnn.outlier_sigma", self.dnn.outlier_sigma)?;
        if !(0.0..=1.0).contains(&self.dnn.outlier_prob) {
            return invalid("dnn.outlier_prob must lie in [0, 1]");
        }
        if self.dnn.bias.len() > self.d || self.dnn.bias.iter().any(|b| !b.is_finite()) {
            return invalid("dnn.bias must hold at most d finite values");
        }

        let k = &self.kalman;
        nonneg("kalman.q", k.q)?;
        positive("kalman.r", k.r)?;
        nonneg("kalman.p0", k.p0)?;
        if !(k.a.is_finite() && k.b.is_finite()) {
            return invalid("kalman.a and kalman.b must be finite");
        }

        let segs = &self.net.segments;
        if segs.is_empty() {
            return invalid("net.segments must not be empty");
        }
        if segs[0].start_tick != 0 {
            return invalid("the first net segment must start at tick 0");
        }
        if segs.windows(2).any(|w| w[0].start_tick >= w[1].start_tick) {
            return invalid("net segment start ticks must strictly increase");
        }
        for s in segs {
            positive(
                "net bandwidth_bytes_per_s",
                s.condition.bandwidth_bytes_per_s,
            )?;
            nonneg("net base_rtt_ms", s.condition.base_rtt_ms)?;
            nonneg("net jitter_sigma_ms", s.condition.jitter_sigma_ms)?;
        }

        if self.splits.is_empty() {
            return invalid("at least one split point is required");
        }
        for (i, s) in self.splits.iter().enumerate() {
            if s.id != i {
                return invalid(format!(
                    "split ids must be 0..K in order; entry {i} has id {}",
                    s.id
                ));
            }
            nonneg("split av_compute_ms", s.av_compute_ms)?;
            nonneg("split rsu_compute_ms", s.rsu_compute_ms)?;
        }

        if let Some(w) = self.bandit.window_w.0 {
            if w < 2 {
                return invalid("bandit.window_w must be >= 2 or \"inf\"");
            }
        }

        let det = &self.detect;
        if det.window < 2 {
            return invalid("detect.window must be >= 2");
        }
        if det.consecutive_required < 1 {
            return invalid("detect.consecutive_required must be >= 1");
        }
        positive("detect.kl_threshold", det.kl_threshold)?;
        positive("detect.var_floor", det.var_floor)?;

        if let Some(l) = self.fixed_latency_ms {
            nonneg("fixed_latency_ms", l)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::Window;

    #[test]
    fn empty_document_is_default() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.bandit.window_w = Window::INFINITE;
        cfg.fixed_latency_ms = Some(250.0);
        let text = cfg.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_sections() {
        let cfg = RunConfig::from_toml_str(
            r#"
            seed = 7
            n_steps = 300
            [fusion]
            dt0_ms = 1000.0
            [[net.segments]]
            start_tick = 0
            bandwidth_bytes_per_s = 1e7
            base_rtt_ms = 20.0
            jitter_sigma_ms = 5.0
            [[net.segments]]
            start_tick = 150
            bandwidth_bytes_per_s = 1e5
            base_rtt_ms = 20.0
            jitter_sigma_ms = 5.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.fusion.dt0_ms, 1000.0);
        assert_eq!(cfg.fusion.k, 1.0);
        assert_eq!(cfg.net.segments.len(), 2);
        assert_eq!(cfg.net.segments[1].condition.bandwidth_bytes_per_s, 1e5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_toml_str("sede = 1"),
            Err(ConfigError::Parse(_))
        ));
        assert!(RunConfig::from_toml_str("[fusion]\nkk = 1.0").is_err());
    }

    #[test]
    fn validation_failures() {
        for doc in [
            "n_steps = 0",
            "dt_ms = 0.0",
            "splits = []",
            "[dnn]\noutlier_prob = 1.5",
            "[bandit]\nwindow_w = 1",
            "[detect]\nwindow = 1",
            "[net]\nsegments = []",
        ] {
            assert!(
                matches!(RunConfig::from_toml_str(doc), Err(ConfigError::Invalid(_))),
                "{doc}"
            );
        }
    }
}
