//! Live vehicle/RSU link over TCP.
//!
//! [`rsu`] answers split-inference requests with DNN samples after a
//! simulated compute delay; [`vehicle`] runs the fusion loop in real time
//! and measures the round trips instead of sampling them.

pub mod rsu;
pub mod vehicle;
pub mod wire;

pub use rsu::{serve_rsu, spawn_rsu, RsuConfig, RsuHandle};
pub use vehicle::{probe_splits, vehicle_client, LiveRun, LiveStats, VehicleOptions};
pub use wire::{InferRequest, InferResponse, WireError};
