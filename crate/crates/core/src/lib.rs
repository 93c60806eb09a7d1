//! Latency-aware pose fusion for split-inference localization.
//!
//! A vehicle tracks itself with drifting visual odometry and periodically
//! receives an absolute pose from a DNN whose layers are split between the
//! vehicle and a roadside unit. This crate:
//!
//! - fuses the late absolute pose with a latency-dependent weight after
//!   forwarding it by the VO motion since capture ([`fusion`]);
//! - provides a per-axis Kalman baseline ([`kalman`]);
//! - models round-trip latency per split point ([`netsim`]);
//! - selects the split with a sliding-window UCB1-Normal bandit ([`bandit`]);
//! - detects bandwidth changes by KL divergence of latency windows
//!   ([`changedetect`]);
//! - runs everything in a deterministic discrete-event loop ([`runner`]),
//!   or in real time against an RSU over TCP ([`link`]).
//!
//! ```
//! use splitloc::config::RunConfig;
//! use splitloc::runner::run_simulation;
//!
//! let report = run_simulation(&RunConfig { n_steps: 300, ..RunConfig::default() }).unwrap();
//! assert_eq!(report.rows.len(), 300);
//! ```

pub mod bandit;
pub mod changedetect;
pub mod config;
pub mod fusion;
pub mod kalman;
pub mod link;
pub mod netsim;
pub mod pose;
pub mod rng;
pub mod runner;
pub mod scenario;

// The guide's snippets run as doc-tests of this crate.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/kalman.md")]
    mod kalman {}
    #[doc = include_str!("../../../book/src/latency.md")]
    mod latency {}
    #[doc = include_str!("../../../book/src/bandit.md")]
    mod bandit {}
    #[doc = include_str!("../../../book/src/change-detection.md")]
    mod change_detection {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/live-link.md")]
    mod live_link {}
}
