use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TimePair;

/// Observation times t₁ < … < t_n and spatial sites x_k = kδ, k = 1..=N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct SamplingGrid {
    times: Vec<f64>,
    delta: f64,
    n_space: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    times: Vec<f64>,
    delta: f64,
    n_space: usize,
}

impl TryFrom<RawGrid> for SamplingGrid {
    type Error = Error;

    fn try_from(r: RawGrid) -> Result<Self> {
        SamplingGrid::new(r.times, r.delta, r.n_space)
    }
}

impl From<SamplingGrid> for RawGrid {
    fn from(g: SamplingGrid) -> Self {
        RawGrid {
            times: g.times,
            delta: g.delta,
            n_space: g.n_space,
        }
    }
}

impl SamplingGrid {
    pub fn new(times: Vec<f64>, delta: f64, n_space: usize) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::domain("grid needs at least one observation time"));
        }
        if times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::domain(format!(
                "observation times must be positive, got {times:?}"
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain(format!(
                "observation times must be strictly increasing, got {times:?}"
            )));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::domain(format!("spatial step must be positive, got {delta}")));
        }
        if n_space == 0 {
            return Err(Error::domain("grid needs at least one spatial site"));
        }
        Ok(SamplingGrid { times, delta, n_space })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    /// n·N, the length of the stacked field vector.
    pub fn dim(&self) -> usize {
        self.times.len() * self.n_space
    }

    /// Spatial coordinate of column k (0-based), i.e. (k+1)δ.
    pub fn site(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.delta
    }

    pub fn with_n_space(&self, n_space: usize) -> Result<Self> {
        SamplingGrid::new(self.times.clone(), self.delta, n_space)
    }

    /// Time pairs (i, j) with i ≤ j in row-major order.
    pub fn upper_pairs(&self) -> Vec<(usize, usize, TimePair)> {
        let n = self.times.len();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push((
                    i,
                    j,
                    TimePair {
                        t: self.times[i],
                        s: self.times[j],
                    },
                ));
            }
        }
        out
    }
}
