//! Spatial lag covariances ρ_{t,s}(k) = Cov(u(t,kδ), u(s,0)) and the squared
//! series r_{t,s} = 2 Σ_{k∈ℤ} ρ_{t,s}(k)².

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelParams, QuadratureSettings, TimePair};
use crate::spatial::spatial_cov_components;

/// Options for the adaptive lag truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagTableOptions {
    pub rel_tol: f64,
    pub quadrature: QuadratureSettings,
    /// First truncation lag tried; doubled until the stopping rule holds.
    pub min_lag: usize,
    pub max_lag: usize,
}

impl Default for LagTableOptions {
    fn default() -> Self {
        LagTableOptions {
            rel_tol: 2e-3,
            quadrature: QuadratureSettings::default(),
            min_lag: 32,
            max_lag: 1 << 15,
        }
    }
}

/// ρ(k) for k = 0..=K, stored for k ≥ 0 only since ρ(−k) = ρ(k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagCovarianceTable {
    pub pair: TimePair,
    pub delta: f64,
    pub values: Vec<f64>,
    /// Unit-noise lag covariances per component; empty when the table was
    /// built from raw values.
    pub components: Vec<Vec<f64>>,
    /// Noise variances the components were combined with.
    #[serde(default)]
    pub noise_variances: Option<[f64; 2]>,
    pub truncation_lag: usize,
    /// Extrapolated Σ_{k>K} ρ(k)² (one side).
    pub tail_estimate: f64,
    /// Fitted power-law exponent of |ρ(k)| over the last stored decade.
    pub decay_exponent: Option<f64>,
    /// |ρ(k)| non-increasing over the second half of the stored range.
    pub monotone_decay: bool,
    pub clt_valid: bool,
}

/// Least-squares slope of ln|ρ(k)| against ln k over the last decade of lags.
fn decay_fit(values: &[f64]) -> Option<f64> {
    let last = values.len().checked_sub(1)?;
    if last < 10 {
        return None;
    }
    let first = (last / 10).max(1);
    let pts: Vec<(f64, f64)> = (first..=last)
        .filter(|&k| values[k] != 0.0)
        .map(|k| ((k as f64).ln(), values[k].abs().ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Σ_{k>K} |ρ(k)|^power under the power-law fit; `None` when the fitted
/// exponent makes the series diverge.
pub fn power_tail(values: &[f64], power: i32, exponent: Option<f64>) -> Option<f64> {
    let last = *values.last()?;
    if last == 0.0 {
        return Some(0.0);
    }
    let k = (values.len() - 1) as f64;
    let beta = exponent?;
    let decay = -(f64::from(power)) * beta - 1.0;
    if decay <= 0.0 {
        return None;
    }
    Some(last.abs().powi(power) * k / decay)
}

/// Σ_{k>K} (s₁ρ₁(k) + s₂ρ₂(k))^power with each unit component extended by its
/// own power law; robust where the components still partly cancel.
fn component_power_tail(comps: &[Vec<f64>], sigmas: [f64; 2], power: i32) -> Option<f64> {
    let k = (comps[0].len() - 1) as f64;
    let amp: Vec<f64> = comps.iter().zip(sigmas).map(|(c, s)| s * c[c.len() - 1]).collect();
    let beta: Vec<Option<f64>> = comps.iter().map(|c| decay_fit(c)).collect();
    let mut tail = 0.0;
    let mut binom = 1.0;
    for j in 0..=power {
        // j factors from the first component, power − j from the second
        let a = amp[0].powi(j) * amp[1].powi(power - j);
        if a != 0.0 {
            let mut exponent = 0.0;
            if j > 0 {
                exponent += f64::from(j) * beta[0]?;
            }
            if j < power {
                exponent += f64::from(power - j) * beta[1]?;
            }
            let decay = -exponent - 1.0;
            if decay <= 0.0 {
                return None;
            }
            tail += binom * a * k / decay;
        }
        binom *= f64::from(power - j) / f64::from(j + 1);
    }
    Some(tail.max(0.0))
}

fn monotone_tail(values: &[f64]) -> bool {
    let start = values.len() / 2;
    values[start..]
        .windows(2)
        .all(|w| w[1].abs() <= w[0].abs() * (1.0 + 1e-9) + 1e-15)
}

impl LagCovarianceTable {
    /// Table from already-known lag covariances (k = 0..values.len()).
    pub fn from_values(pair: TimePair, delta: f64, values: Vec<f64>, clt_valid: bool) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("lag table needs at least the k = 0 entry"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("lag covariances must be finite"));
        }
        let decay_exponent = decay_fit(&values);
        let tail_estimate = power_tail(&values, 2, decay_exponent).unwrap_or(f64::INFINITY);
        Ok(LagCovarianceTable {
            pair,
            delta,
            truncation_lag: values.len() - 1,
            tail_estimate,
            decay_exponent,
            monotone_decay: monotone_tail(&values),
            components: Vec::new(),
            noise_variances: None,
            values,
            clt_valid,
        })
    }

    /// ρ(k) for k = 0..n_lags without any truncation logic.
    pub fn compute(p: &ModelParams, pair: TimePair, delta: f64, n_lags: usize, q: &QuadratureSettings) -> Result<Self> {
        check_delta(delta)?;
        let mut comps = [Vec::with_capacity(n_lags), Vec::with_capacity(n_lags)];
        extend_components(p, pair, delta, &mut comps, n_lags, q)?;
        Self::from_components(p, pair, delta, comps)
    }

    fn from_components(p: &ModelParams, pair: TimePair, delta: f64, comps: [Vec<f64>; 2]) -> Result<Self> {
        let values = combine(&comps, p.sigma1_sq(), p.sigma2_sq());
        let mut table = Self::from_values(pair, delta, values, p.clt_valid())?;
        table.attach_components(comps.to_vec(), [p.sigma1_sq(), p.sigma2_sq()]);
        Ok(table)
    }

    fn attach_components(&mut self, comps: Vec<Vec<f64>>, sigmas: [f64; 2]) {
        if self.values.len() > 1 {
            self.tail_estimate = component_power_tail(&comps, sigmas, 2).unwrap_or(f64::INFINITY);
        }
        self.components = comps;
        self.noise_variances = Some(sigmas);
    }

    /// One-sided Σ_{k>K} ρ(k)^power, extrapolated per component when possible.
    fn power_tail(&self, power: i32) -> Option<f64> {
        if self.values.len() < 2 {
            return Some(0.0);
        }
        match self.noise_variances {
            Some(s) => component_power_tail(&self.components, s, power),
            None => power_tail(&self.values, power, decay_fit(&self.values)),
        }
    }

    /// Same lags under different noise variances (requires component data).
    pub fn rescaled(&self, sigma1_sq: f64, sigma2_sq: f64) -> Result<Self> {
        if self.components.len() != 2 {
            return Err(Error::domain("rescaling needs per-component lag data"));
        }
        let comps = [self.components[0].clone(), self.components[1].clone()];
        let mut table = Self::from_values(
            self.pair,
            self.delta,
            combine(&comps, sigma1_sq, sigma2_sq),
            self.clt_valid,
        )?;
        table.attach_components(comps.to_vec(), [sigma1_sq, sigma2_sq]);
        Ok(table)
    }

    pub fn get(&self, lag: i64) -> Option<f64> {
        self.values.get(lag.unsigned_abs() as usize).copied()
    }

    /// Σ_{|k|≤K} ρ(k)².
    pub fn two_sided_energy(&self) -> f64 {
        let rest: f64 = self.values[1..].iter().map(|v| v * v).sum();
        self.values[0] * self.values[0] + 2.0 * rest
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("spatial step must be positive, got {delta}")))
    }
}

fn combine(comps: &[Vec<f64>; 2], s1: f64, s2: f64) -> Vec<f64> {
    comps[0].iter().zip(&comps[1]).map(|(a, b)| s1 * a + s2 * b).collect()
}

fn extend_components(
    p: &ModelParams,
    pair: TimePair,
    delta: f64,
    comps: &mut [Vec<f64>; 2],
    up_to: usize,
    q: &QuadratureSettings,
) -> Result<()> {
    use rayon::prelude::*;
    let start = comps[0].len();
    let fresh: Vec<[f64; 2]> = (start..up_to)
        .into_par_iter()
        .map(|k| spatial_cov_components(p, pair, k as f64 * delta, q))
        .collect::<Result<_>>()?;
    for [a, b] in fresh {
        comps[0].push(a);
        comps[1].push(b);
    }
    Ok(())
}

/// Lag table truncated adaptively: K doubles until ρ(K)² and the power-law
/// tail estimate are both below `rel_tol · Σ_{|k|≤K} ρ(k)²`.
pub fn lag_cov_table(p: &ModelParams, pair: TimePair, delta: f64, rel_tol: f64) -> Result<LagCovarianceTable> {
    lag_cov_table_with(
        p,
        pair,
        delta,
        &LagTableOptions {
            rel_tol,
            ..Default::default()
        },
    )
}

pub fn lag_cov_table_with(
    p: &ModelParams,
    pair: TimePair,
    delta: f64,
    opts: &LagTableOptions,
) -> Result<LagCovarianceTable> {
    check_delta(delta)?;
    if !(opts.rel_tol > 0.0 && opts.rel_tol < 1.0) {
        return Err(Error::domain(format!(
            "rel_tol must lie in (0, 1), got {}",
            opts.rel_tol
        )));
    }
    let mut comps = [Vec::new(), Vec::new()];
    let mut k_max = opts.min_lag.max(16);
    loop {
        extend_components(p, pair, delta, &mut comps, k_max + 1, &opts.quadrature)?;
        let table = LagCovarianceTable::from_components(p, pair, delta, comps.clone())?;
        let energy = table.two_sided_energy();
        let last = table.values[k_max];
        let threshold = opts.rel_tol * energy;
        if energy == 0.0 || (last * last < threshold && 2.0 * table.tail_estimate < threshold) {
            return Ok(table);
        }
        if k_max >= opts.max_lag {
            return Err(Error::numeric(
                format!(
                    "lag covariances not decaying after {k_max} lags (fitted exponent {:?})",
                    table.decay_exponent
                ),
                2.0 * table.tail_estimate / energy,
            ));
        }
        k_max = (2 * k_max).min(opts.max_lag);
    }
}

/// r = 2 Σ_{k∈ℤ} ρ(k)², including the extrapolated tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesSum {
    pub value: f64,
    pub tail: f64,
    /// False when a Hurst index is ≥ 3/4 and the series need not converge.
    pub clt_valid: bool,
}

pub fn r_series(table: &LagCovarianceTable) -> Result<SeriesSum> {
    let energy = table.two_sided_energy();
    if energy == 0.0 {
        return Ok(SeriesSum {
            value: 0.0,
            tail: 0.0,
            clt_valid: table.clt_valid,
        });
    }
    let tail = if table.values.len() == 1 {
        0.0
    } else {
        match table.power_tail(2) {
            Some(t) if t.is_finite() => 2.0 * t,
            _ => {
                return Err(Error::numeric(
                    format!(
                        "squared lag covariances not summable (fitted exponent {:?})",
                        table.decay_exponent
                    ),
                    f64::INFINITY,
                ))
            }
        }
    };
    Ok(SeriesSum {
        value: 2.0 * (energy + tail),
        tail: 2.0 * tail,
        clt_valid: table.clt_valid,
    })
}

/// Σ_{k∈ℤ} ρ(k)⁴ with extrapolated tail.
pub fn fourth_power_series(table: &LagCovarianceTable) -> Result<f64> {
    let values = &table.values;
    let head = values[0].powi(4) + 2.0 * values[1..].iter().map(|v| v.powi(4)).sum::<f64>();
    let tail = table
        .power_tail(4)
        .ok_or_else(|| Error::numeric("fourth-power lag series not summable", f64::INFINITY))?;
    Ok(head + 2.0 * tail)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::temporal_cov;

    fn pair(t: f64, s: f64) -> TimePair {
        TimePair::new(t, s).unwrap()
    }

    #[test]
    fn zero_table_has_zero_series() {
        let t = LagCovarianceTable::from_values(pair(1.0, 1.0), 1.0, vec![0.0; 50], true).unwrap();
        assert_eq!(r_series(&t).unwrap().value, 0.0);
    }

    #[test]
    fn single_entry_series() {
        let t = LagCovarianceTable::from_values(pair(1.0, 1.0), 1.0, vec![1.5], true).unwrap();
        assert_eq!(r_series(&t).unwrap().value, 2.0 * 1.5 * 1.5);
        let mut v = vec![0.0; 40];
        v[0] = -0.7;
        let t = LagCovarianceTable::from_values(pair(1.0, 1.0), 1.0, v, true).unwrap();
        assert!((r_series(&t).unwrap().value - 2.0 * 0.49).abs() < 1e-15);
    }

    #[test]
    fn power_law_tail_matches_exact_sum() {
        // ρ(k) = (1+k)^{-1.2}: tail of ρ² ≈ ∫ k^{-2.4}.
        let values: Vec<f64> = (0..2000).map(|k| (1.0 + k as f64).powf(-1.2)).collect();
        let t = LagCovarianceTable::from_values(pair(1.0, 1.0), 1.0, values, true).unwrap();
        let beta = t.decay_exponent.unwrap();
        assert!((beta + 1.2).abs() < 0.01, "{beta}");
        let exact_tail: f64 = (2000..5_000_000).map(|k| (1.0 + k as f64).powf(-2.4)).sum();
        assert!(((t.tail_estimate - exact_tail) / exact_tail).abs() < 0.02);
        assert!(t.monotone_decay);
    }

    #[test]
    fn divergent_series_is_an_error() {
        let values: Vec<f64> = (0..200).map(|k| (1.0 + k as f64).powf(-0.3)).collect();
        let t = LagCovarianceTable::from_values(pair(1.0, 1.0), 1.0, values, false).unwrap();
        assert!(r_series(&t).is_err());
    }

    #[test]
    fn first_entry_is_temporal_covariance() {
        let p = ModelParams::new(0.3, 0.6, 1.0, 2.0).unwrap();
        let q = QuadratureSettings::default();
        let pr = pair(1.0, 2.0);
        let t = LagCovarianceTable::compute(&p, pr, 1.0, 4, &q).unwrap();
        assert!((t.values[0] - temporal_cov(&p, pr)).abs() < 1e-8);
        assert_eq!(t.get(-3), t.get(3));
    }

    #[test]
    fn rescaling_matches_direct_build() {
        let p = ModelParams::new(0.3, 0.6, 1.0, 2.0).unwrap();
        let q = QuadratureSettings::default();
        let pr = pair(1.0, 1.0);
        let t = LagCovarianceTable::compute(&p, pr, 1.0, 12, &q).unwrap();
        let direct = LagCovarianceTable::compute(&p.with_sigmas(0.5, 3.0).unwrap(), pr, 1.0, 12, &q).unwrap();
        let r = t.rescaled(0.5, 3.0).unwrap();
        for (a, b) in r.values.iter().zip(&direct.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adaptive_table_meets_stopping_rule() {
        let p = ModelParams::new(0.3, 0.6, 1.0, 1.0).unwrap();
        let t = lag_cov_table(&p, pair(1.0, 1.0), 1.0, 1e-2).unwrap();
        let energy = t.two_sided_energy();
        let last = *t.values.last().unwrap();
        assert!(last * last < 1e-2 * energy);
        assert!(2.0 * t.tail_estimate < 1e-2 * energy);
        assert!(t.monotone_decay);
        // The negative H₁ = 0.3 component still offsets the x^{-0.8} decay of
        // the H₂ part at these lags, so the apparent exponent is shallower.
        let beta = t.decay_exponent.unwrap();
        assert!(beta < -0.5 && beta > -1.0, "{beta} at K={}", t.truncation_lag);
    }

    #[test]
    fn cancelling_components_keep_a_finite_tail() {
        // c₁ = −2k^{-1.6}, c₂ = k^{-0.8}: at σ₁² = 3.7, σ₂² = 0.39 the mix
        // crosses zero near the end of the table, which breaks a single fit.
        let n = 400;
        let c1: Vec<f64> = (0..n).map(|k| -2.0 * (1.0 + k as f64).powf(-1.6)).collect();
        let c2: Vec<f64> = (0..n).map(|k| (1.0 + k as f64).powf(-0.8)).collect();
        let s = [3.7, 0.39];
        let mix = combine(&[c1.clone(), c2.clone()], s[0], s[1]);
        let mut t = LagCovarianceTable::from_values(pair(1.0, 1.0), 1.0, mix, true).unwrap();
        t.attach_components(vec![c1, c2], s);
        let exact: f64 = (n..4_000_000)
            .map(|k| {
                let x = 1.0 + k as f64;
                (-2.0 * s[0] * x.powf(-1.6) + s[1] * x.powf(-0.8)).powi(2)
            })
            .sum();
        assert!(
            ((t.tail_estimate - exact) / exact).abs() < 0.05,
            "{} vs {exact}",
            t.tail_estimate
        );
        assert!(r_series(&t).is_ok());
        assert!(fourth_power_series(&t).unwrap().is_finite());
    }

    #[test]
    fn rejects_bad_arguments() {
        let p = ModelParams::new(0.3, 0.6, 1.0, 1.0).unwrap();
        assert!(lag_cov_table(&p, pair(1.0, 1.0), 0.0, 1e-2).is_err());
        assert!(lag_cov_table(&p, pair(1.0, 1.0), 1.0, 1.5).is_err());
    }
}
