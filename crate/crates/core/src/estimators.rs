//! Method-of-moments estimators built on the spatial averages
//! V_N(t) = N⁻¹ Σ_k u(t, kδ)² and J_N(t) = N⁻¹ Σ_k u(t, kδ)⁴.
//!
//! Population moments satisfy t^{−(H₂+1)} μ(t) = σ₁² c_{H₁} t^{H₁−H₂} + σ₂² c_{H₂},
//! so a ratio of differences across three times depends on H₁ alone through
//! f, and two times give a linear system in (σ₁², σ₂²).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HurstIndex;
use crate::model::ModelParams;
use crate::moments::{c_const, model_mu};
use crate::sim::FieldSample;
use crate::stats::pairwise_sum;

/// Search interval for Ĥ₁ is (ε, 1 − ε).
pub const H_EPS: f64 = 1e-6;

/// Below this |H − H₂| the ratio uses its Taylor expansion.
const SERIES_RADIUS: f64 = 1e-6;

const MONOTONE_GRID: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flag {
    RatioOutOfRange,
    NegativeVariance,
    CLTInvalid,
    QuadratureDegraded,
}

pub type Flags = BTreeSet<Flag>;

/// V_N and J_N per observation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentStats {
    pub times: Vec<f64>,
    pub v_stat: Vec<f64>,
    pub j_stat: Vec<f64>,
    pub n_space: usize,
}

impl MomentStats {
    pub fn from_sample(sample: &FieldSample) -> Self {
        let n = sample.grid.n_times();
        MomentStats {
            times: sample.grid.times().to_vec(),
            v_stat: (0..n).map(|i| v_stat(sample, i)).collect(),
            j_stat: (0..n).map(|i| j_stat(sample, i)).collect(),
            n_space: sample.grid.n_space(),
        }
    }

    /// Population values V = μ(t), J = 3μ(t)².
    pub fn population(p: &ModelParams, times: &[f64]) -> Result<Self> {
        let mu = times.iter().map(|&t| model_mu(p, t)).collect::<Result<Vec<_>>>()?;
        Ok(MomentStats {
            times: times.to_vec(),
            j_stat: mu.iter().map(|m| 3.0 * m * m).collect(),
            v_stat: mu,
            n_space: usize::MAX,
        })
    }

    fn expect_times(&self, n: usize, what: &str) -> Result<()> {
        if self.times.len() != n {
            return Err(Error::domain(format!(
                "{what} needs exactly {n} observation times, got {}",
                self.times.len()
            )));
        }
        Ok(())
    }
}

fn power_mean(row: &[f64], power: i32) -> f64 {
    let p: Vec<f64> = row.iter().map(|v| v.powi(power)).collect();
    pairwise_sum(&p) / row.len() as f64
}

/// V_N(t_i).
pub fn v_stat(sample: &FieldSample, i: usize) -> f64 {
    power_mean(sample.row(i), 2)
}

/// J_N(t_i).
pub fn j_stat(sample: &FieldSample, i: usize) -> f64 {
    power_mean(sample.row(i), 4)
}

fn check_times3(t: [f64; 3]) -> Result<()> {
    if !(t[0] > 0.0 && t[0] < t[1] && t[1] < t[2] && t[2].is_finite()) {
        return Err(Error::domain(format!("need 0 < t1 < t2 < t3, got {t:?}")));
    }
    Ok(())
}

/// f(H) = (t₂^d − t₁^d)/(t₃^d − t₁^d), d = H − H₂, with its limit
/// ln(t₂/t₁)/ln(t₃/t₁) at d = 0.
pub fn f_ratio(h: f64, h2: HurstIndex, t: [f64; 3]) -> Result<f64> {
    check_times3(t)?;
    Ok(f_unchecked(h - h2.value(), t))
}

fn f_unchecked(d: f64, t: [f64; 3]) -> f64 {
    let l2 = (t[1] / t[0]).ln();
    let l3 = (t[2] / t[0]).ln();
    if d.abs() < SERIES_RADIUS {
        // expm1(x)/x = 1 + x/2 + x²/6 + O(x³)
        let g = |l: f64| 1.0 + d * l / 2.0 + (d * l).powi(2) / 6.0;
        (l2 / l3) * (g(l2) / g(l3))
    } else {
        (d * l2).exp_m1() / (d * l3).exp_m1()
    }
}

/// f for fixed (H₂, t) with its monotone direction verified.
#[derive(Debug, Clone, Copy)]
pub struct RatioFunction {
    h2: HurstIndex,
    t: [f64; 3],
    decreasing: bool,
}

/// Result of inverting f.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub h: f64,
    pub out_of_range: bool,
}

impl RatioFunction {
    /// Checks strict monotonicity of f on a 64-point grid over (ε, 1 − ε).
    pub fn new(h2: HurstIndex, t: [f64; 3]) -> Result<Self> {
        check_times3(t)?;
        let f = |h: f64| f_unchecked(h - h2.value(), t);
        let grid: Vec<f64> = (0..MONOTONE_GRID)
            .map(|i| H_EPS + (1.0 - 2.0 * H_EPS) * i as f64 / (MONOTONE_GRID - 1) as f64)
            .map(f)
            .collect();
        let decreasing = grid[MONOTONE_GRID - 1] < grid[0];
        let strict = grid
            .windows(2)
            .all(|w| if decreasing { w[1] < w[0] } else { w[1] > w[0] });
        if !strict {
            return Err(Error::Internal(format!(
                "f is not strictly monotone on (0, 1) for H2 = {}, t = {t:?}",
                h2.value()
            )));
        }
        Ok(RatioFunction { h2, t, decreasing })
    }

    pub fn decreasing(&self) -> bool {
        self.decreasing
    }

    pub fn eval(&self, h: f64) -> f64 {
        f_unchecked(h - self.h2.value(), self.t)
    }

    /// f⁻¹(y) on (ε, 1 − ε); outside the range the nearer boundary is
    /// returned with `out_of_range` set.
    pub fn inverse(&self, y: f64) -> Result<Inversion> {
        if !y.is_finite() {
            return Err(Error::numeric(format!("ratio is not finite: {y}"), y));
        }
        let (lo, hi) = (H_EPS, 1.0 - H_EPS);
        // g increasing in h with g(h*) = 0
        let sign = if self.decreasing { -1.0 } else { 1.0 };
        let g = |h: f64| sign * (self.eval(h) - y);
        let (g_lo, g_hi) = (g(lo), g(hi));
        if g_lo > 0.0 {
            return Ok(Inversion {
                h: lo,
                out_of_range: true,
            });
        }
        if g_hi < 0.0 {
            return Ok(Inversion {
                h: hi,
                out_of_range: true,
            });
        }
        let (mut a, mut b, mut ga, mut gb) = (lo, hi, g_lo, g_hi);
        for _ in 0..40 {
            let m = 0.5 * (a + b);
            let gm = g(m);
            if gm == 0.0 {
                return Ok(Inversion {
                    h: m,
                    out_of_range: false,
                });
            }
            if gm < 0.0 {
                (a, ga) = (m, gm);
            } else {
                (b, gb) = (m, gm);
            }
        }
        // secant polish inside the bracket
        let mut x = if gb.abs() < ga.abs() { b } else { a };
        for _ in 0..20 {
            let cand = a - ga * (b - a) / (gb - ga);
            let cand = if cand > a && cand < b { cand } else { 0.5 * (a + b) };
            let gc = g(cand);
            x = cand;
            if gc == 0.0 || (b - a) <= 4.0 * f64::EPSILON * b {
                break;
            }
            if gc < 0.0 {
                (a, ga) = (cand, gc);
            } else {
                (b, gb) = (cand, gc);
            }
            if gc.abs() <= 1e-15 {
                break;
            }
        }
        Ok(Inversion {
            h: x,
            out_of_range: false,
        })
    }
}

/// f⁻¹(y) for one-off use.
pub fn f_inverse(y: f64, h2: HurstIndex, t: [f64; 3]) -> Result<Inversion> {
    RatioFunction::new(h2, t)?.inverse(y)
}

/// Plug-in ratio whose f-preimage is Ĥ₁.
pub fn h1_ratio(v: [f64; 3], h2: HurstIndex, t: [f64; 3]) -> Result<f64> {
    let a = -(h2.value() + 1.0);
    let w: Vec<f64> = (0..3).map(|i| t[i].powf(a) * v[i]).collect();
    let num = w[1] - w[0];
    let den = w[2] - w[0];
    let scale = w.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    if !(den.abs() > 1e-300 * scale) {
        return Err(Error::DegenerateRatio { denominator: den });
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Estimate {
    pub h1_hat: f64,
    pub ratio: f64,
    pub flags: Flags,
}

/// Ĥ₁ from V_N at three times with H₂ known.
pub fn estimate_h1(stats: &MomentStats, h2: HurstIndex) -> Result<H1Estimate> {
    stats.expect_times(3, "estimate_h1")?;
    let t = [stats.times[0], stats.times[1], stats.times[2]];
    let f = RatioFunction::new(h2, t)?;
    estimate_h1_with(&f, [stats.v_stat[0], stats.v_stat[1], stats.v_stat[2]])
}

/// Ĥ₁ reusing a prepared f.
pub fn estimate_h1_with(f: &RatioFunction, v: [f64; 3]) -> Result<H1Estimate> {
    let ratio = h1_ratio(v, f.h2, f.t)?;
    let inv = f.inverse(ratio)?;
    let mut flags = Flags::new();
    if inv.out_of_range {
        flags.insert(Flag::RatioOutOfRange);
    }
    Ok(H1Estimate {
        h1_hat: inv.h,
        ratio,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEstimate {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub flags: Flags,
}

impl SigmaEstimate {
    fn new(sigma1_sq: f64, sigma2_sq: f64) -> Self {
        let mut flags = Flags::new();
        if sigma1_sq < 0.0 || sigma2_sq < 0.0 {
            flags.insert(Flag::NegativeVariance);
        }
        SigmaEstimate {
            sigma1_sq,
            sigma2_sq,
            flags,
        }
    }
}

fn check_pair(h1: HurstIndex, h2: HurstIndex, t1: f64, t2: f64) -> Result<()> {
    if h1 == h2 {
        return Err(Error::domain("σ estimators need H1 ≠ H2"));
    }
    if !(t1 > 0.0 && t1 < t2 && t2.is_finite()) {
        return Err(Error::domain(format!("need 0 < t1 < t2, got ({t1}, {t2})")));
    }
    Ok(())
}

/// Row of the exact linear map (V(t₁), V(t₂)) ↦ σ̂²_a for component a, the
/// other component b being eliminated.
fn sigma_row(ha: HurstIndex, hb: HurstIndex, t1: f64, t2: f64) -> [f64; 2] {
    let e = -(hb.value() + 1.0);
    let d = ha.value() - hb.value();
    let den = c_const(ha) * (t1.powf(d) - t2.powf(d));
    [t1.powf(e) / den, -t2.powf(e) / den]
}

/// Matrix A with (σ̂₁², σ̂₂²) = A (V_N(t₁), V_N(t₂)).
pub fn sigma_map(h1: HurstIndex, h2: HurstIndex, t1: f64, t2: f64) -> Result<[[f64; 2]; 2]> {
    check_pair(h1, h2, t1, t2)?;
    Ok([sigma_row(h1, h2, t1, t2), sigma_row(h2, h1, t1, t2)])
}

/// (σ̂₁², σ̂₂²) from V_N at two times with both Hurst indices known.
pub fn estimate_sigmas(stats: &MomentStats, h1: HurstIndex, h2: HurstIndex) -> Result<SigmaEstimate> {
    stats.expect_times(2, "estimate_sigmas")?;
    let a = sigma_map(h1, h2, stats.times[0], stats.times[1])?;
    let v = [stats.v_stat[0], stats.v_stat[1]];
    Ok(SigmaEstimate::new(
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ))
}

/// Matrix B with (σ̂₁², σ̂₂²) = B (V_N(t₁), √(J_N(t₂)/3)).
pub fn moment4_map(h1: HurstIndex, h2: HurstIndex, t1: f64, t2: f64) -> Result<[[f64; 2]; 2]> {
    check_pair(h1, h2, t1, t2)?;
    let (c1, c2) = (c_const(h1), c_const(h2));
    let m = [
        [c1 * t1.powf(h1.value() + 1.0), c2 * t1.powf(h2.value() + 1.0)],
        [c1 * t2.powf(h1.value() + 1.0), c2 * t2.powf(h2.value() + 1.0)],
    ];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.abs() > 0.0) {
        return Err(Error::domain("fourth-moment system is singular"));
    }
    Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// (σ̂₁², σ̂₂²) from V_N(t₁) and J_N(t₂).
pub fn estimate_sigmas_moment4(stats: &MomentStats, h1: HurstIndex, h2: HurstIndex) -> Result<SigmaEstimate> {
    stats.expect_times(2, "estimate_sigmas_moment4")?;
    let j2 = stats.j_stat[1];
    if !(j2 >= 0.0) {
        return Err(Error::domain(format!("J_N must be ≥ 0, got {j2}")));
    }
    let b = moment4_map(h1, h2, stats.times[0], stats.times[1])?;
    let rhs = [stats.v_stat[0], (j2 / 3.0).sqrt()];
    Ok(SigmaEstimate::new(
        b[0][0] * rhs[0] + b[0][1] * rhs[1],
        b[1][0] * rhs[0] + b[1][1] * rhs[1],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SamplingGrid;
    use crate::sim::SimMethod;

    fn h(v: f64) -> HurstIndex {
        HurstIndex::new(v).unwrap()
    }

    const T: [f64; 3] = [1.0, 2.0, 4.0];

    #[test]
    fn moment_statistics_by_hand() {
        let g = SamplingGrid::new(vec![1.0, 2.0], 1.0, 3).unwrap();
        let s = FieldSample::new(g, vec![vec![1.0, -1.0, 2.0], vec![0.5; 3]], 0, 0, SimMethod::Dense).unwrap();
        assert_eq!(v_stat(&s, 0), 2.0);
        assert_eq!(j_stat(&s, 0), 6.0);
        assert_eq!(v_stat(&s, 1), 0.25);
        assert_eq!(j_stat(&s, 1), 0.0625);
    }

    #[test]
    fn ratio_closed_forms() {
        assert!((f_ratio(0.6, h(0.6), T).unwrap() - 0.5).abs() < 1e-15);
        assert!((f_ratio(0.9, h(0.1), T).unwrap() - 1.0 / (2f64.powf(0.8) + 1.0)).abs() < 1e-15);
        assert!((f_ratio(0.1, h(0.6), T).unwrap() - 0.585_786_437_626_905).abs() < 1e-12);
        // with t1 = 1 the ratio is 1/(2^d + 1); d = 1 gives 1/3
        assert!((f_unchecked(1.0, T) - 1.0 / 3.0).abs() < 1e-15);
        assert!(f_ratio(0.5, h(0.6), [1.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn ratio_is_continuous_across_the_switch() {
        for &d in &[0.999e-6, 1.001e-6, -0.999e-6, -1.001e-6, 1e-9] {
            let exact = {
                let (l2, l3) = (2f64.ln(), 4f64.ln());
                ((d * l2).exp_m1()) / ((d * l3).exp_m1())
            };
            assert!((f_unchecked(d, T) - exact).abs() < 1e-9 * exact);
        }
    }

    #[test]
    fn ratio_direction_is_detected() {
        assert!(RatioFunction::new(h(0.6), T).unwrap().decreasing());
    }

    #[test]
    fn inverse_round_trip_and_boundaries() {
        let f = RatioFunction::new(h(0.6), T).unwrap();
        let at_h2 = f.inverse(0.5).unwrap();
        assert!((at_h2.h - 0.6).abs() < 1e-10 && !at_h2.out_of_range);
        for i in 1..=9 {
            let hv = i as f64 / 10.0;
            let r = f.inverse(f.eval(hv)).unwrap();
            assert!((r.h - hv).abs() < 1e-10, "{hv}: {}", r.h);
        }
        let r = f.inverse(1.0 / 3.0).unwrap();
        assert!(r.out_of_range);
        assert_eq!(r.h, 1.0 - H_EPS);
        let r = f.inverse(0.99).unwrap();
        assert!(r.out_of_range);
        assert_eq!(r.h, H_EPS);
    }

    #[test]
    fn population_moments_recover_truth() {
        let p = ModelParams::new(0.3, 0.6, 1.0, 2.0).unwrap();
        let pop = MomentStats::population(&p, &T).unwrap();
        let e = estimate_h1(&pop, p.h2()).unwrap();
        assert!((e.h1_hat - 0.3).abs() < 1e-10);
        assert!(e.flags.is_empty());

        let pop2 = MomentStats::population(&p, &[1.0, 2.0]).unwrap();
        let s = estimate_sigmas(&pop2, p.h1(), p.h2()).unwrap();
        assert!((s.sigma1_sq - 1.0).abs() < 1e-10 && (s.sigma2_sq - 2.0).abs() < 1e-10);
        let s4 = estimate_sigmas_moment4(&pop2, p.h1(), p.h2()).unwrap();
        assert!((s4.sigma1_sq - 1.0).abs() < 1e-10 && (s4.sigma2_sq - 2.0).abs() < 1e-10);
    }

    #[test]
    fn sigma_estimates_swap_exactly() {
        let p = ModelParams::new(0.3, 0.6, 1.0, 2.0).unwrap();
        let q = ModelParams::new(0.6, 0.3, 2.0, 1.0).unwrap();
        let stats = MomentStats {
            times: vec![1.0, 2.0],
            v_stat: vec![0.91, 2.7],
            j_stat: vec![2.4, 21.0],
            n_space: 100,
        };
        let a = estimate_sigmas(&stats, p.h1(), p.h2()).unwrap();
        let b = estimate_sigmas(&stats, q.h1(), q.h2()).unwrap();
        assert_eq!((a.sigma1_sq, a.sigma2_sq), (b.sigma2_sq, b.sigma1_sq));
    }

    #[test]
    fn degenerate_inputs() {
        let flat = MomentStats {
            times: T.to_vec(),
            v_stat: vec![0.0; 3],
            j_stat: vec![0.0; 3],
            n_space: 10,
        };
        assert!(matches!(estimate_h1(&flat, h(0.6)), Err(Error::DegenerateRatio { .. })));
        let two = MomentStats {
            times: vec![1.0, 2.0],
            v_stat: vec![1.0, 0.1],
            j_stat: vec![3.0, 0.0],
            n_space: 10,
        };
        assert!(estimate_sigmas(&two, h(0.4), h(0.4)).is_err());
        let s = estimate_sigmas_moment4(&two, h(0.3), h(0.6)).unwrap();
        assert!(s.flags.contains(&Flag::NegativeVariance));
        let neg = estimate_sigmas(&two, h(0.3), h(0.6)).unwrap();
        assert!(neg.sigma1_sq < 0.0 || neg.sigma2_sq < 0.0);
        assert!(neg.flags.contains(&Flag::NegativeVariance));
    }
}
