//! Closed-form second moments of the solution field at a single site.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{HurstIndex, ModelParams, TimePair};

/// Γ on the range needed here (argument H + ½ ∈ (½, 3/2)).
pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// 2^H Γ(H+½) / (√π (H+1)), the common prefactor of the unit-noise moments.
fn prefactor(h: f64) -> f64 {
    2f64.powf(h) * gamma(h + 0.5) / (PI.sqrt() * (h + 1.0))
}

/// c_H = 2^{H+1}(2^H − 1) Γ(H+½) / (√π (H+1)).
pub fn c_const(h: HurstIndex) -> f64 {
    let h = h.value();
    2.0 * (2f64.powf(h) - 1.0) * prefactor(h)
}

/// v_t(H) = c_H t^{H+1}: variance of the unit-noise field at time t.
pub fn v_t(h: HurstIndex, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time must be finite and non-negative, got {t}")));
    }
    Ok(c_const(h) * t.powf(h.value() + 1.0))
}

/// μ(t) = σ₁² v_t(H₁) + σ₂² v_t(H₂), the pointwise variance of u(t, x).
pub fn model_mu(p: &ModelParams, t: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (h, s2) in p.components() {
        acc += s2 * v_t(h, t)?;
    }
    Ok(acc)
}

/// Cov(u(t,x), u(s,x)) for a unit-variance noise component.
pub fn temporal_cov_unit(h: HurstIndex, pair: TimePair) -> f64 {
    let (t, s) = (pair.t, pair.s);
    if t == 0.0 || s == 0.0 {
        return 0.0;
    }
    let e = h.value() + 1.0;
    prefactor(h.value()) * ((t + s).powf(e) - t.powf(e) - s.powf(e))
}

/// Cov(u(t,x), u(s,x)); independent of x.
pub fn temporal_cov(p: &ModelParams, pair: TimePair) -> f64 {
    p.components()
        .iter()
        .map(|&(h, s2)| s2 * temporal_cov_unit(h, pair))
        .sum()
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    fn h(v: f64) -> HurstIndex {
        HurstIndex::new(v).unwrap()
    }

    // Reference values from tests/oracle/heat_cov_oracle.py (mpmath, 30 digits).
    #[test]
    fn c_const_matches_high_precision_oracle() {
        let cases = [
            (0.5, 0.440_659_475_056_862_96),
            (0.25, 0.248_899_374_055_144_39),
            (0.75, 0.670_136_111_208_637_27),
            (0.3, 0.287_569_476_063_917_62),
            (0.7, 0.618_280_307_713_904_86),
        ];
        for (hv, want) in cases {
            let got = c_const(h(hv));
            assert!((got - want).abs() < 1e-14, "H={hv}: {got} vs {want}");
        }
    }

    #[test]
    fn gamma_accuracy_in_ulps() {
        let cases = [
            (0.6, 1.489_192_248_812_817_1),
            (0.8, 1.164_229_713_725_303_4),
            (1.1, 0.951_350_769_866_873_18),
            (1.2, 0.918_168_742_399_760_61),
            (1.5, 0.886_226_925_452_758_01),
            (0.55, 1.616_124_268_733_575_1),
            (1.45, 0.885_661_380_271_072_08),
        ];
        for (x, want) in cases {
            let ulps = ((gamma(x) - want) / (want * f64::EPSILON)).abs();
            assert!(ulps <= 4.0, "Γ({x}) off by {ulps} ulp");
        }
        assert_eq!(gamma(1.0), 1.0);
    }

    #[test]
    fn v_t_cases() {
        assert_eq!(v_t(h(0.5), 0.0).unwrap(), 0.0);
        assert_eq!(v_t(h(0.5), 1.0).unwrap(), c_const(h(0.5)));
        let want = c_const(h(0.3)) * 2f64.powf(1.3);
        assert!((v_t(h(0.3), 2.0).unwrap() - want).abs() < 1e-15);
        assert!(v_t(h(0.3), -1.0).is_err());
    }

    #[test]
    fn model_mu_cases() {
        let p = ModelParams::new(0.3, 0.7, 1.0, 1.0).unwrap();
        assert_eq!(model_mu(&p, 0.0).unwrap(), 0.0);
        let got = model_mu(&p, 1.0).unwrap();
        assert!((got - 0.905_849_783_777_822_48).abs() < 1e-14, "{got}");
    }

    #[test]
    fn temporal_cov_cases() {
        let p = ModelParams::new(0.3, 0.7, 1.0, 1.0).unwrap();
        assert_eq!(temporal_cov(&p, TimePair::new(1.5, 0.0).unwrap()), 0.0);
        let got = temporal_cov(&p, TimePair::new(1.0, 2.0).unwrap());
        assert!((got - 1.541_877_893_787_238_6).abs() < 1e-14, "{got}");
    }

    #[test]
    fn temporal_cov_on_diagonal_is_variance() {
        for hv in [0.1, 0.3, 0.5, 0.7] {
            let p = ModelParams::new(hv, 0.45, 1.3, 0.7).unwrap();
            for t in [0.5, 1.0, 2.0] {
                let diag = temporal_cov(&p, TimePair::new(t, t).unwrap());
                let mu = model_mu(&p, t).unwrap();
                assert!(((diag - mu) / mu).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn variance_strictly_increasing_in_time() {
        let p = ModelParams::new(0.2, 0.9, 1.0, 0.5).unwrap();
        let mut prev = 0.0;
        for i in 1..200 {
            let mu = model_mu(&p, i as f64 * 0.05).unwrap();
            assert!(mu > prev && mu.is_finite());
            prev = mu;
        }
    }
}
