//! Limit covariances of the moment statistics and delta-method intervals.
//!
//! √N (V_N(t_i) − μ(t_i)) is asymptotically normal with covariance
//! R = (r_{t_i,t_j}). Ĥ₁ = g(V) with g = f⁻¹ ∘ ratio, so its variance is
//! ∇gᵀ R ∇g; the σ estimators are linear maps of (V, √(J/3)) and inherit
//! A R Aᵀ.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_h1_with, estimate_sigmas, estimate_sigmas_moment4, moment4_map, sigma_map, Flag, Flags, MomentStats,
    RatioFunction,
};
use crate::lags::{fourth_power_series, lag_cov_table_with, r_series, LagCovarianceTable, LagTableOptions};
use crate::model::{HurstIndex, ModelParams, TimePair};
use crate::rng::inverse_normal_cdf;

/// Lags used for the truncated sums when a Hurst index is ≥ 3/4.
const HEURISTIC_LAGS: usize = 1024;

/// Negative variances down to this (relative) size are rounding noise.
const NEGATIVE_VARIANCE_TOL: f64 = 1e-12;

/// Loosening applied to quadrature tolerances after a failure.
const DEGRADE_FACTOR: f64 = 100.0;

/// Lag tables ρ_{t_i,t_j} for all i ≤ j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltTables {
    pub times: Vec<f64>,
    pub delta: f64,
    tables: Vec<LagCovarianceTable>,
    pub clt_valid: bool,
    pub quadrature_degraded: bool,
}

impl CltTables {
    pub fn compute(p: &ModelParams, times: &[f64], delta: f64, opts: &LagTableOptions) -> Result<Self> {
        let n = times.len();
        let mut tables = Vec::with_capacity(n * (n + 1) / 2);
        let mut degraded = false;
        for i in 0..n {
            for j in i..n {
                let pair = TimePair::new(times[i], times[j])?;
                let (table, d) = pair_table(p, pair, delta, opts)?;
                degraded |= d;
                tables.push(table);
            }
        }
        Ok(CltTables {
            times: times.to_vec(),
            delta,
            tables,
            clt_valid: p.clt_valid(),
            quadrature_degraded: degraded,
        })
    }

    /// Same Hurst indices with different noise variances.
    pub fn rescaled(&self, sigma1_sq: f64, sigma2_sq: f64) -> Result<Self> {
        Ok(CltTables {
            tables: self
                .tables
                .iter()
                .map(|t| t.rescaled(sigma1_sq, sigma2_sq))
                .collect::<Result<_>>()?,
            ..self.clone()
        })
    }

    pub fn table(&self, i: usize, j: usize) -> &LagCovarianceTable {
        let n = self.times.len();
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        &self.tables[i * n - i * (i + 1) / 2 + j]
    }

    /// μ(t_i) = ρ_{t_i,t_i}(0).
    pub fn mu(&self, i: usize) -> f64 {
        self.table(i, i).values[0]
    }

    fn series(&self, i: usize, j: usize) -> Result<f64> {
        let t = self.table(i, j);
        if self.clt_valid {
            Ok(r_series(t)?.value)
        } else {
            Ok(2.0 * t.two_sided_energy())
        }
    }

    fn fourth(&self, i: usize) -> Result<f64> {
        let t = self.table(i, i);
        if self.clt_valid {
            fourth_power_series(t)
        } else {
            let v = &t.values;
            Ok(v[0].powi(4) + 2.0 * v[1..].iter().map(|x| x.powi(4)).sum::<f64>())
        }
    }

    /// R = (r_{t_i,t_j}).
    pub fn r_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.times.len();
        let mut r = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.series(i, j)?;
                r[(i, j)] = v;
                r[(j, i)] = v;
            }
        }
        Ok(r)
    }

    /// Limit covariance of √N (V_N(t_a), J_N(t_b)).
    pub fn v_j_cov(&self, a: usize, b: usize) -> Result<[[f64; 2]; 2]> {
        let mu_b = self.mu(b);
        let r_aa = self.series(a, a)?;
        let r_ab = self.series(a, b)?;
        let r_bb = self.series(b, b)?;
        // Cov(X², Y⁴) = 12 Var(Y) Cov(X,Y)²; Cov(X⁴, Y⁴) = 72 μ² c² + 24 c⁴
        let vj = 6.0 * mu_b * r_ab;
        let jj = 36.0 * mu_b * mu_b * r_bb + 24.0 * self.fourth(b)?;
        Ok([[r_aa, vj], [vj, jj]])
    }
}

fn pair_table(
    p: &ModelParams,
    pair: TimePair,
    delta: f64,
    opts: &LagTableOptions,
) -> Result<(LagCovarianceTable, bool)> {
    let attempt = |opts: &LagTableOptions| {
        if p.clt_valid() {
            lag_cov_table_with(p, pair, delta, opts)
        } else {
            LagCovarianceTable::compute(p, pair, delta, HEURISTIC_LAGS + 1, &opts.quadrature)
        }
    };
    match attempt(opts) {
        Ok(t) => Ok((t, false)),
        Err(Error::Numeric { .. }) => {
            let loose = LagTableOptions {
                quadrature: opts.quadrature.tightened(1.0 / DEGRADE_FACTOR),
                ..*opts
            };
            Ok((attempt(&loose)?, true))
        }
        Err(e) => Err(e),
    }
}

/// n×n matrix R for the given model and times.
pub fn clt_matrix(p: &ModelParams, times: &[f64], delta: f64) -> Result<DMatrix<f64>> {
    CltTables::compute(p, times, delta, &LagTableOptions::default())?.r_matrix()
}

/// ∇g at `mu` by central differences, step max(1e−6, 1e−6·|μ_i|).
pub fn h1_gradient(f: &RatioFunction, mu: [f64; 3]) -> Result<[f64; 3]> {
    h1_gradient_step(f, mu, 1e-6)
}

/// ∇g with relative step `rel`.
pub fn h1_gradient_step(f: &RatioFunction, mu: [f64; 3], rel: f64) -> Result<[f64; 3]> {
    let mut grad = [0.0; 3];
    for i in 0..3 {
        let h = rel.max(rel * mu[i].abs());
        let mut up = mu;
        let mut down = mu;
        up[i] += h;
        down[i] -= h;
        let gu = estimate_h1_with(f, up)?.h1_hat;
        let gd = estimate_h1_with(f, down)?.h1_hat;
        grad[i] = (gu - gd) / (2.0 * h);
    }
    Ok(grad)
}

fn checked_variance(v: f64, scale: f64, what: &str) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -NEGATIVE_VARIANCE_TOL * scale.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::numeric(format!("negative asymptotic variance for {what}"), v))
    }
}

/// ζ² = ∇gᵀ R ∇g.
pub fn zeta_sq(grad: [f64; 3], r: &DMatrix<f64>) -> Result<f64> {
    let mut s = 0.0;
    let mut scale = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += grad[i] * r[(i, j)] * grad[j];
            scale += (grad[i] * r[(i, j)] * grad[j]).abs();
        }
    }
    checked_variance(s, scale, "H1")
}

/// A C Aᵀ for 2×2 matrices, with tiny negative diagonals clipped.
pub fn sandwich(a: [[f64; 2]; 2], c: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let mut out = [[0.0; 2]; 2];
    let mut scale = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[i][j] += a[i][k] * c[k][l] * a[j][l];
                    scale[i][j] += (a[i][k] * c[k][l] * a[j][l]).abs();
                }
            }
        }
    }
    out[1][0] = out[0][1];
    for i in 0..2 {
        out[i][i] = checked_variance(out[i][i], scale[i][i], "sigma estimator")?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// estimate ± z_{1−α/2} √(variance/N).
pub fn confidence_interval(estimate: f64, variance: f64, n_space: usize, alpha: f64) -> Interval {
    let z = inverse_normal_cdf(1.0 - alpha / 2.0);
    let half = z * (variance / n_space as f64).sqrt();
    Interval {
        lower: estimate - half,
        upper: estimate + half,
    }
}

/// Point estimate with its asymptotic variance (of √N times the error).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub estimate: f64,
    pub asymptotic_variance: f64,
    pub ci: Interval,
}

impl ParamEstimate {
    fn new(estimate: f64, variance: f64, n_space: usize, alpha: f64) -> Self {
        ParamEstimate {
            estimate,
            asymptotic_variance: variance,
            ci: confidence_interval(estimate, variance, n_space, alpha),
        }
    }
}

/// Which parameters are estimated and which are known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    /// Ĥ₁ from three times with H₂ known.
    H1 { h2: HurstIndex },
    /// (σ̂₁², σ̂₂²) from two times, both by the second-moment and the
    /// fourth-moment system, with both Hurst indices known.
    Sigmas { h1: HurstIndex, h2: HurstIndex },
}

impl Target {
    pub fn n_times(&self) -> usize {
        match self {
            Target::H1 { .. } => 3,
            Target::Sigmas { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n_space: usize,
    pub alpha: f64,
    pub h1: Option<ParamEstimate>,
    pub zeta_sq: Option<f64>,
    pub sigma1_sq: Option<ParamEstimate>,
    pub sigma2_sq: Option<ParamEstimate>,
    pub sigma_cov: Option<[[f64; 2]; 2]>,
    pub sigma1_sq_moment4: Option<ParamEstimate>,
    pub sigma2_sq_moment4: Option<ParamEstimate>,
    pub sigma_cov_moment4: Option<[[f64; 2]; 2]>,
    pub clt_matrix: Vec<Vec<f64>>,
    pub flags: Flags,
}

/// Point estimates from `stats` with variances from `tables`, which hold the
/// lag covariances of whatever model the caller plugs in.
pub fn asymptotic_ci(stats: &MomentStats, target: &Target, tables: &CltTables, alpha: f64) -> Result<EstimateReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if tables.times != stats.times || stats.times.len() != target.n_times() {
        return Err(Error::domain(
            "statistics, tables and target disagree on the observation times",
        ));
    }
    let r = tables.r_matrix()?;
    let n = stats.n_space;
    let mut flags = Flags::new();
    if !tables.clt_valid {
        flags.insert(Flag::CLTInvalid);
    }
    if tables.quadrature_degraded {
        flags.insert(Flag::QuadratureDegraded);
    }
    let mut report = EstimateReport {
        n_space: n,
        alpha,
        h1: None,
        zeta_sq: None,
        sigma1_sq: None,
        sigma2_sq: None,
        sigma_cov: None,
        sigma1_sq_moment4: None,
        sigma2_sq_moment4: None,
        sigma_cov_moment4: None,
        clt_matrix: (0..r.nrows()).map(|i| r.row(i).iter().cloned().collect()).collect(),
        flags: Flags::new(),
    };
    match *target {
        Target::H1 { h2 } => {
            let t = [stats.times[0], stats.times[1], stats.times[2]];
            let f = RatioFunction::new(h2, t)?;
            let est = estimate_h1_with(&f, [stats.v_stat[0], stats.v_stat[1], stats.v_stat[2]])?;
            flags.extend(est.flags.iter().copied());
            let grad = h1_gradient(&f, [tables.mu(0), tables.mu(1), tables.mu(2)])?;
            let z = zeta_sq(grad, &r)?;
            report.h1 = Some(ParamEstimate::new(est.h1_hat, z, n, alpha));
            report.zeta_sq = Some(z);
        }
        Target::Sigmas { h1, h2 } => {
            let (t1, t2) = (stats.times[0], stats.times[1]);
            let est = estimate_sigmas(stats, h1, h2)?;
            let cov = sandwich(
                sigma_map(h1, h2, t1, t2)?,
                [[r[(0, 0)], r[(0, 1)]], [r[(1, 0)], r[(1, 1)]]],
            )?;
            flags.extend(est.flags.iter().copied());
            report.sigma1_sq = Some(ParamEstimate::new(est.sigma1_sq, cov[0][0], n, alpha));
            report.sigma2_sq = Some(ParamEstimate::new(est.sigma2_sq, cov[1][1], n, alpha));
            report.sigma_cov = Some(cov);

            let est4 = estimate_sigmas_moment4(stats, h1, h2)?;
            let w = tables.v_j_cov(0, 1)?;
            // d√(J/3)/dJ at J = 3μ² is 1/(6μ)
            let d = 1.0 / (6.0 * tables.mu(1));
            let w = [[w[0][0], d * w[0][1]], [d * w[1][0], d * d * w[1][1]]];
            let cov4 = sandwich(moment4_map(h1, h2, t1, t2)?, w)?;
            flags.extend(est4.flags.iter().copied());
            report.sigma1_sq_moment4 = Some(ParamEstimate::new(est4.sigma1_sq, cov4[0][0], n, alpha));
            report.sigma2_sq_moment4 = Some(ParamEstimate::new(est4.sigma2_sq, cov4[1][1], n, alpha));
            report.sigma_cov_moment4 = Some(cov4);
        }
    }
    report.flags = flags;
    Ok(report)
}

/// Noise variances clipped into a range where the plug-in model exists.
pub fn plugin_sigmas(sigma1_sq: f64, sigma2_sq: f64) -> (f64, f64) {
    let floor = 1e-8 * sigma1_sq.abs().max(sigma2_sq.abs()).max(1e-300);
    (sigma1_sq.max(floor), sigma2_sq.max(floor))
}
