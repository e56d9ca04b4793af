use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `J_1 x ... x J_n`, optionally with a time interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub intervals: Vec<(f64, f64)>,
    pub time: Option<(f64, f64)>,
}

impl BoxDomain {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::Domain("box needs at least one interval".into()));
        }
        for &(a, b) in &intervals {
            if !(b > a) || !a.is_finite() || !b.is_finite() {
                return Err(Error::Domain(format!("degenerate interval ({a}, {b})")));
            }
        }
        Ok(Self { intervals, time: None })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            intervals: vec![(0.0, 1.0); dim],
            time: None,
        }
    }

    pub fn with_time(mut self, t0: f64, t1: f64) -> Result<Self> {
        if !(t1 > t0) {
            return Err(Error::Domain(format!("degenerate time interval ({t0}, {t1})")));
        }
        self.time = Some((t0, t1));
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn length(&self, axis: usize) -> f64 {
        let (a, b) = self.intervals[axis];
        b - a
    }

    /// Sum of the side lengths.
    pub fn side_sum(&self) -> f64 {
        (0..self.dim()).map(|k| self.length(k)).sum()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|k| self.length(k)).product()
    }

    pub fn duration(&self) -> f64 {
        self.time.map(|(a, b)| b - a).unwrap_or(0.0)
    }

    pub fn spacetime_volume(&self) -> f64 {
        self.volume() * self.duration()
    }

    /// Uniform nodes including both endpoints of `axis`.
    pub fn nodes(&self, axis: usize, count: usize) -> Vec<f64> {
        let (a, b) = self.intervals[axis];
        if count == 1 {
            return vec![a];
        }
        (0..count)
            .map(|i| a + (b - a) * i as f64 / (count - 1) as f64)
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.intervals
            .iter()
            .zip(x)
            .all(|(&(a, b), &v)| v >= a && v <= b)
    }
}
