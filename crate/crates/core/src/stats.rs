//! Order-fixed reductions and goodness-of-fit tests for Monte Carlo checks.
//!
//! All sums are pairwise over the input order, so a result depends only on
//! the sequence of values and not on how the values were produced.

use crate::rng::normal_cdf;

const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (cascade) sum.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= PAIRWISE_BLOCK {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}

pub fn mean(x: &[f64]) -> f64 {
    pairwise_sum(x) / x.len() as f64
}

/// Unbiased sample covariance; `None` for fewer than two points.
pub fn covariance(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let prods: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    Some(pairwise_sum(&prods) / (x.len() - 1) as f64)
}

pub fn variance(x: &[f64]) -> Option<f64> {
    covariance(x, x)
}

pub fn std_dev(x: &[f64]) -> Option<f64> {
    variance(x).map(f64::sqrt)
}

pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    TestResult {
        statistic: d,
        p_value: kolmogorov_q((ne + 0.12 + 0.11 / ne) * d),
    }
}

/// Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²).
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Anderson–Darling normality test with mean and variance estimated from the
/// data; returns the adjusted statistic A*² and its approximate p-value
/// (D'Agostino and Stephens, 1986).
pub fn anderson_darling_normal(x: &[f64]) -> TestResult {
    let n = x.len();
    assert!(n >= 8, "Anderson–Darling needs at least 8 points");
    let m = mean(x);
    let sd = std_dev(x).unwrap();
    let mut z: Vec<f64> = x.iter().map(|v| (v - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let terms: Vec<f64> = (0..n)
        .map(|i| {
            let lo = normal_cdf(z[i]).max(f64::MIN_POSITIVE);
            let hi = (1.0 - normal_cdf(z[n - 1 - i])).max(f64::MIN_POSITIVE);
            (2.0 * i as f64 + 1.0) * (lo.ln() + hi.ln())
        })
        .collect();
    let a2 = -nf - pairwise_sum(&terms) / nf;
    let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    TestResult {
        statistic: a,
        p_value: p.clamp(0.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    #[test]
    fn pairwise_sum_matches_exact() {
        let x: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&x), 500_500.0);
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(variance(&[1.0, 2.0, 3.0]), Some(1.0));
        assert_eq!(variance(&[1.0]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
    }

    #[test]
    fn ks_statistic_by_hand() {
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]);
        assert_eq!(r.statistic, 1.0);
        let r = ks_two_sample(&[1.0, 2.0], &[1.0, 2.0]);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn ks_accepts_same_law_and_rejects_shift() {
        let a = derive_stream(1, 0).take(5000);
        let b = derive_stream(1, 1).take(5000);
        assert!(ks_two_sample(&a, &b).p_value > 0.001);
        let shifted: Vec<f64> = b.iter().map(|v| v + 0.2).collect();
        assert!(ks_two_sample(&a, &shifted).p_value < 1e-6);
    }

    #[test]
    fn anderson_darling_separates_normal_from_skewed() {
        let z = derive_stream(2, 0).take(2000);
        assert!(anderson_darling_normal(&z).p_value > 0.001);
        let sq: Vec<f64> = z.iter().map(|v| v * v).collect();
        assert!(anderson_darling_normal(&sq).p_value < 1e-6);
    }
}
