//! Parameter and configuration types of the mixed-noise heat model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hurst index of one fractional noise component, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HurstIndex(f64);

impl HurstIndex {
    /// Upper bound (exclusive) under which the squared-field CLT applies.
    pub const CLT_BOUND: f64 = 0.75;

    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(HurstIndex(value))
        } else {
            Err(Error::domain(format!("Hurst index must lie in (0, 1), got {value}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn clt_valid(self) -> bool {
        self.0 < Self::CLT_BOUND
    }
}

impl TryFrom<f64> for HurstIndex {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        HurstIndex::new(v)
    }
}

impl From<HurstIndex> for f64 {
    fn from(h: HurstIndex) -> f64 {
        h.0
    }
}

/// Two Hurst indices and the matching noise variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelParams", into = "RawModelParams")]
pub struct ModelParams {
    h1: HurstIndex,
    h2: HurstIndex,
    sigma1_sq: f64,
    sigma2_sq: f64,
}

#[derive(Serialize, Deserialize)]
struct RawModelParams {
    h1: f64,
    h2: f64,
    sigma1_sq: f64,
    sigma2_sq: f64,
}

impl TryFrom<RawModelParams> for ModelParams {
    type Error = Error;

    fn try_from(r: RawModelParams) -> Result<Self> {
        ModelParams::new(r.h1, r.h2, r.sigma1_sq, r.sigma2_sq)
    }
}

impl From<ModelParams> for RawModelParams {
    fn from(p: ModelParams) -> Self {
        RawModelParams {
            h1: p.h1.value(),
            h2: p.h2.value(),
            sigma1_sq: p.sigma1_sq,
            sigma2_sq: p.sigma2_sq,
        }
    }
}

impl ModelParams {
    pub fn new(h1: f64, h2: f64, sigma1_sq: f64, sigma2_sq: f64) -> Result<Self> {
        let h1 = HurstIndex::new(h1)?;
        let h2 = HurstIndex::new(h2)?;
        for (name, s) in [("sigma1_sq", sigma1_sq), ("sigma2_sq", sigma2_sq)] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive and finite, got {s}")));
            }
        }
        Ok(ModelParams {
            h1,
            h2,
            sigma1_sq,
            sigma2_sq,
        })
    }

    pub fn h1(&self) -> HurstIndex {
        self.h1
    }

    pub fn h2(&self) -> HurstIndex {
        self.h2
    }

    pub fn sigma1_sq(&self) -> f64 {
        self.sigma1_sq
    }

    pub fn sigma2_sq(&self) -> f64 {
        self.sigma2_sq
    }

    /// The two noise components as `(H, σ²)` pairs.
    pub fn components(&self) -> [(HurstIndex, f64); 2] {
        [(self.h1, self.sigma1_sq), (self.h2, self.sigma2_sq)]
    }

    /// H1 ≠ H2, needed by every moment estimator.
    pub fn identifiable(&self) -> bool {
        self.h1 != self.h2
    }

    pub fn clt_valid(&self) -> bool {
        self.h1.clt_valid() && self.h2.clt_valid()
    }

    pub fn with_sigmas(&self, sigma1_sq: f64, sigma2_sq: f64) -> Result<Self> {
        ModelParams::new(self.h1.value(), self.h2.value(), sigma1_sq, sigma2_sq)
    }
}

/// Convention for the heat kernel inside covariance integrands.
///
/// `HalfLaplacian` is the fundamental solution of ∂t − ½∂xx,
/// G(t,x) = (2πt)^{-1/2} exp(−x²/(2t)).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelSpec {
    #[default]
    HalfLaplacian,
}

impl KernelSpec {
    pub fn green(self, t: f64, x: f64) -> f64 {
        match self {
            KernelSpec::HalfLaplacian => (-x * x / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt(),
        }
    }
}

/// Pair of observation times (t, s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePair {
    pub t: f64,
    pub s: f64,
}

impl TimePair {
    pub fn new(t: f64, s: f64) -> Result<Self> {
        if t >= 0.0 && s >= 0.0 && t.is_finite() && s.is_finite() {
            Ok(TimePair { t, s })
        } else {
            Err(Error::domain(format!(
                "times must be finite and non-negative, got ({t}, {s})"
            )))
        }
    }

    pub fn swapped(self) -> Self {
        TimePair { t: self.s, s: self.t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            abs_tol: 1e-9,
            rel_tol: 1e-7,
            max_subdivisions: 2000,
        }
    }
}

impl QuadratureSettings {
    pub fn new(abs_tol: f64, rel_tol: f64, max_subdivisions: usize) -> Result<Self> {
        let q = QuadratureSettings {
            abs_tol,
            rel_tol,
            max_subdivisions,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::domain("quadrature tolerances must be positive"));
        }
        if self.max_subdivisions < 16 {
            return Err(Error::domain("max_subdivisions must be at least 16"));
        }
        Ok(())
    }

    /// Same settings with both tolerances divided by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        QuadratureSettings {
            abs_tol: self.abs_tol / factor,
            rel_tol: self.rel_tol / factor,
            max_subdivisions: self.max_subdivisions,
        }
    }
}
