//! Cov(u(t,0), u(s,x)) by quadrature.
//!
//! For one unit-variance noise component with Hurst index H the covariance is
//!
//! ```text
//! (1/√(2π)) ∫₀ᵗ∫₀ˢ (q+r)^{-3/2} ∫ H|y|^{2H-1} sign(y) (y-x) exp(-(y-x)²/(2(q+r))) dy dq dr.
//! ```
//!
//! The integrand depends on (q, r) only through u = q + r, and the length of
//! the segment {q + r = u} inside [0,t]×[0,s] is m(u) = min(u, t, s, t+s−u).
//! Rescaling y = √u·z turns the inner integral into H u^{H+½} K(x/√u) with
//!
//! ```text
//! K(a) = ∫ |z|^{2H-1} sign(z) (z-a) exp(-(z-a)²/2) dz,
//! ```
//!
//! so the covariance collapses to the one-dimensional integral
//! (H/√(2π)) ∫₀^{t+s} m(u) u^{H-1} K(|x|/√u) du.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{HurstIndex, ModelParams, QuadratureSettings, TimePair};
use crate::quadrature::{integrate, Tolerance};

/// Exponent of the power substitution w = w₁ v^m used on pieces that start at
/// an algebraic kink; it lifts a w^α endpoint to v^{m(α+1)−1}.
const SOFTENING_POWER: i32 = 4;

/// Relative accuracy demanded from the inner kernel integral.
const INNER_REL_TOL: f64 = 1e-11;

/// Half-width (in units of √u) beyond which the Gaussian factor is dropped.
fn truncation_width(h: f64) -> f64 {
    10.0 * (2.0 * h).sqrt().max(1.0)
}

/// ∫_{lo}^{lo+len} f, with the substitution w = lo + len·v^m on v ∈ [0, 1].
fn softened(f: &mut dyn FnMut(f64) -> f64, lo: f64, len: f64, tol: Tolerance) -> Result<(f64, f64)> {
    let m = SOFTENING_POWER;
    let r = integrate(
        |v: f64| {
            let vm1 = v.powi(m - 1);
            f(lo + len * vm1 * v) * len * f64::from(m) * vm1
        },
        &[0.0, 1.0],
        tol,
    )?;
    Ok((r.value, r.abs_err))
}

/// (a+d)^p − (a−d)^p for 0 ≤ d < a without cancellation.
fn power_difference(a: f64, d: f64, p: f64) -> f64 {
    let r = d / a;
    let l1 = r.ln_1p();
    let l2 = (-r).ln_1p();
    2.0 * a.powf(p) * (0.5 * p * (l1 + l2)).exp() * (0.5 * p * (l1 - l2)).sinh()
}

/// The scaled inner integral K(a) for a single Hurst index; even in `a`.
///
/// Returns the value and an error bound that includes the dropped Gaussian
/// tails.
pub fn inner_kernel(h: HurstIndex, a: f64, max_subdivisions: usize) -> Result<(f64, f64)> {
    let hv = h.value();
    let p = 2.0 * hv - 1.0;
    let a = a.abs();
    let width = truncation_width(hv);
    let gauss_tail = (-0.5 * width * width).exp() * (width + 2.0);

    let scale = a.max(1.0).powf(p - 1.0);
    let tol = Tolerance {
        abs: 1e-15 * scale,
        rel: INNER_REL_TOL,
        max_subdivisions,
    };

    if a <= width {
        // Combine the two half-lines: the bracket is odd in w, so the
        // integrand behaves like w^{2H} at the origin.
        let mut g = |w: f64| {
            if w <= 0.0 {
                return 0.0;
            }
            let (dm, dp) = (w - a, w + a);
            w.powf(p) * (dm * (-0.5 * dm * dm).exp() + dp * (-0.5 * dp * dp).exp())
        };
        let w1 = a.max(1.0);
        let (head, head_err) = softened(&mut g, 0.0, w1, tol)?;
        let body = integrate(&mut g, &[w1, a + width], tol)?;
        let tail = gauss_tail * (a + width).powf(p.max(0.0)) * 2.0;
        Ok((head + body.value, head_err + body.abs_err + tail))
    } else {
        // Gaussian peak at w = a: fold d ↦ ±d so the odd part cancels exactly.
        let body = integrate(
            |d: f64| d * (-0.5 * d * d).exp() * power_difference(a, d, p),
            &[0.0, 1.0, width],
            tol,
        )?;
        let left = (0.5 * a).powf(p) * gauss_tail * 2.0 + a.powf(2.0 * hv + 1.0) * (-a * a / 8.0).exp() / (2.0 * hv);
        let right = gauss_tail * (2.0 * a).powf(p.max(0.0)) * 2.0;
        Ok((body.value, body.abs_err + left + right))
    }
}

/// Unit-noise covariance Cov(u_H(t,0), u_H(s,x)) with an explicit absolute
/// tolerance for the outer integral.
fn unit_cov_with(h: HurstIndex, pair: TimePair, x: f64, abs_tol: f64, q: &QuadratureSettings) -> Result<f64> {
    let (t, s) = (pair.t, pair.s);
    if t == 0.0 || s == 0.0 {
        return Ok(0.0);
    }
    let hv = h.value();
    let x = x.abs();
    let front = hv / (2.0 * PI).sqrt();
    let (lo, hi) = (t.min(s), t.max(s));
    let total = t + s;

    let mut inner_failure: Option<Error> = None;
    let mut phi = |u: f64| -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        let weight = u.min(lo).min(total - u).max(0.0);
        let k = if x == 0.0 {
            Ok((2f64.powf(hv + 0.5) * crate::moments::gamma(hv + 0.5), 0.0))
        } else {
            inner_kernel(h, x / u.sqrt(), q.max_subdivisions)
        };
        match k {
            Ok((kv, _)) => weight * u.powf(hv - 1.0) * kv,
            Err(e) => {
                inner_failure.get_or_insert(e);
                0.0
            }
        }
    };

    let tol = Tolerance {
        abs: abs_tol / front,
        rel: q.rel_tol,
        max_subdivisions: q.max_subdivisions,
    };
    // Split the budget so the three pieces together meet it.
    let piece_tol = Tolerance {
        abs: tol.abs / 3.0,
        rel: tol.rel / 3.0,
        ..tol
    };
    let (head, _) = softened(&mut phi, 0.0, lo, piece_tol)?;
    let rest = integrate(&mut phi, &[lo, hi, total], piece_tol)?;
    if let Some(e) = inner_failure {
        return Err(e);
    }
    Ok(front * (head + rest.value))
}

/// Covariance of one unit-variance noise component, Cov(u_H(t,0), u_H(s,x)).
pub fn spatial_cov_unit(h: HurstIndex, pair: TimePair, x: f64, q: &QuadratureSettings) -> Result<f64> {
    q.validate()?;
    unit_cov_with(h, pair, x, q.abs_tol, q)
}

/// Cov(u(t,0), u(s,x)) = σ₁² F_{H₁}(t,s,x) + σ₂² F_{H₂}(t,s,x).
///
/// Exactly even in `x` and symmetric under t ↔ s.
pub fn spatial_cov(p: &ModelParams, pair: TimePair, x: f64, q: &QuadratureSettings) -> Result<f64> {
    Ok(spatial_cov_components(p, pair, x, q)?
        .iter()
        .zip(p.components())
        .map(|(f, (_, s2))| s2 * f)
        .sum())
}

/// The two unit-noise covariances F_{H₁}, F_{H₂}, each computed to the
/// accuracy needed for their σ²-weighted sum to meet `q`.
pub fn spatial_cov_components(p: &ModelParams, pair: TimePair, x: f64, q: &QuadratureSettings) -> Result<[f64; 2]> {
    q.validate()?;
    let [(h1, s1), (h2, s2)] = p.components();
    Ok([
        unit_cov_with(h1, pair, x, 0.5 * q.abs_tol / s1, q)?,
        unit_cov_with(h2, pair, x, 0.5 * q.abs_tol / s2, q)?,
    ])
}
