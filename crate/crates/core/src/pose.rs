//! Positions in R^d and the discrete simulation clock.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Add, AddAssign, Sub};

/// A position in R^d, meters.
///
/// Ground truth, VO output, DNN output and every fused estimate share this
/// type. Dimension is fixed per run but not at compile time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose(Vec<f64>);

impl Pose {
    pub fn new(coords: Vec<f64>) -> Self {
        Pose(coords)
    }

    pub fn zeros(d: usize) -> Self {
        Pose(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn coords_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn scale(&self, s: f64) -> Pose {
        Pose(self.0.iter().map(|c| c * s).collect())
    }

    /// Euclidean norm. All error measurements in this crate use it.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for Pose {
    fn from(v: Vec<f64>) -> Self {
        Pose(v)
    }
}

impl<const N: usize> From<[f64; N]> for Pose {
    fn from(v: [f64; N]) -> Self {
        Pose(v.to_vec())
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl Add<&Pose> for &Pose {
    type Output = Pose;
    fn add(self, rhs: &Pose) -> Pose {
        debug_assert_eq!(self.dim(), rhs.dim());
        Pose(self.0.iter().zip(&rhs.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub<&Pose> for &Pose {
    type Output = Pose;
    fn sub(self, rhs: &Pose) -> Pose {
        debug_assert_eq!(self.dim(), rhs.dim());
        Pose(self.0.iter().zip(&rhs.0).map(|(a, b)| a - b).collect())
    }
}

impl AddAssign<&Pose> for Pose {
    fn add_assign(&mut self, rhs: &Pose) {
        debug_assert_eq!(self.dim(), rhs.dim());
        for (a, b) in self.0.iter_mut().zip(&rhs.0) {
            *a += b;
        }
    }
}

/// Tick counter with a fixed tick length in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub step: u64,
    pub dt_ms: f64,
}

impl SimClock {
    pub fn new(dt_ms: f64) -> Self {
        SimClock { step: 0, dt_ms }
    }

    pub fn time_ms(&self) -> f64 {
        self.step as f64 * self.dt_ms
    }

    pub fn advance(&mut self) {
        self.step += 1;
    }

    /// Number of ticks a result with latency `latency_ms` takes to arrive.
    ///
    /// Arrivals land on tick boundaries (`ceil`) and never on the capture
    /// tick itself, so the result is at least 1.
    pub fn ticks_for_latency(&self, latency_ms: f64) -> u64 {
        ticks_for_latency(latency_ms, self.dt_ms)
    }
}

pub fn ticks_for_latency(latency_ms: f64, dt_ms: f64) -> u64 {
    let ticks = (latency_ms / dt_ms).ceil();
    if ticks.is_finite() && ticks >= 1.0 {
        ticks as u64
    } else if ticks.is_finite() {
        1
    } else {
        u64::MAX
    }
}
