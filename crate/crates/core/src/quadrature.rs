//! Globally adaptive Gauss–Kronrod (G10/K21) quadrature.
//!
//! All sub-intervals share one priority queue keyed on their local error
//! estimate, so break points supplied by the caller (kinks, peaks) are
//! honoured without splitting the tolerance budget by hand.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Tolerances and subdivision budget for one adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_subdivisions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err: f64,
    pub subdivisions: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    roundoff: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err) == Ordering::Equal
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut scaled = err.abs();
    if res_asc != 0.0 && scaled != 0.0 {
        let scale = (200.0 * scaled / res_asc).powf(1.5);
        scaled = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        scaled = scaled.max(50.0 * f64::EPSILON * res_abs);
    }
    scaled
}

fn kronrod21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let f_center = f(center);

    let mut res_gauss = 0.0;
    let mut res_kronrod = f_center * WGK[10];
    let mut res_abs = res_kronrod.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];

    for j in 0..5 {
        let jtw = 2 * j + 1;
        let dx = half * XGK[jtw];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[jtw] = f1;
        fv2[jtw] = f2;
        res_gauss += WG[j] * (f1 + f2);
        res_kronrod += WGK[jtw] * (f1 + f2);
        res_abs += WGK[jtw] * (f1.abs() + f2.abs());
    }
    for j in 0..5 {
        let jtwm1 = 2 * j;
        let dx = half * XGK[jtwm1];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[jtwm1] = f1;
        fv2[jtwm1] = f2;
        res_kronrod += WGK[jtwm1] * (f1 + f2);
        res_abs += WGK[jtwm1] * (f1.abs() + f2.abs());
    }

    let mean = 0.5 * res_kronrod;
    let mut res_asc = WGK[10] * (f_center - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }

    let err = (res_kronrod - res_gauss) * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    Segment {
        a,
        b,
        value: res_kronrod * half,
        err: rescale_error(err, res_abs, res_asc),
        roundoff: 50.0 * f64::EPSILON * res_abs,
    }
}

/// Integrates `f` over consecutive intervals `[points[0], points[1]], ...`.
///
/// `points` must be non-decreasing; zero-length pieces are skipped. Fails with
/// [`Error::Numeric`] carrying the achieved error estimate if the subdivision
/// budget runs out before `max(abs, rel·|I|)` is met.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], tol: Tolerance) -> Result<QuadResult> {
    if points.len() < 2 {
        return Err(Error::domain("integration needs at least two break points"));
    }
    if points.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::domain(format!(
            "integration break points must be non-decreasing: {points:?}"
        )));
    }

    let mut heap = BinaryHeap::new();
    for w in points.windows(2) {
        if w[1] > w[0] {
            heap.push(kronrod21(&mut f, w[0], w[1]));
        }
    }
    if heap.is_empty() {
        return Ok(QuadResult {
            value: 0.0,
            abs_err: 0.0,
            subdivisions: 0,
        });
    }

    let mut subdivisions = heap.len();
    loop {
        let (value, err, roundoff) = heap
            .iter()
            .fold((0.0, 0.0, 0.0), |(v, e, r), s| (v + s.value, e + s.err, r + s.roundoff));
        let target = tol.abs.max(tol.rel * value.abs());
        if err <= target || err <= roundoff {
            return Ok(QuadResult {
                value,
                abs_err: err,
                subdivisions,
            });
        }
        if subdivisions >= tol.max_subdivisions {
            return Err(Error::numeric(
                format!("adaptive quadrature did not converge within {subdivisions} subdivisions (target {target:e})"),
                err,
            ));
        }

        let worst = heap.pop().expect("heap is non-empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval can no longer be bisected in floating point.
            return Err(Error::numeric("adaptive quadrature hit floating-point resolution", err));
        }
        heap.push(kronrod21(&mut f, worst.a, mid));
        heap.push(kronrod21(&mut f, mid, worst.b));
        subdivisions += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol(abs: f64, rel: f64) -> Tolerance {
        Tolerance {
            abs,
            rel,
            max_subdivisions: 500,
        }
    }

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x| 3.0 * x * x, &[0.0, 2.0], tol(1e-14, 1e-14)).unwrap();
        assert!((r.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn gaussian_with_break_points() {
        let r = integrate(
            |x: f64| (-0.5 * x * x).exp(),
            &[-12.0, 0.0, 3.0, 12.0],
            tol(1e-13, 1e-12),
        )
        .unwrap();
        let exact = (2.0 * std::f64::consts::PI).sqrt();
        assert!((r.value - exact).abs() < 1e-11, "{}", r.value - exact);
    }

    #[test]
    fn algebraic_kink_converges() {
        // ∫_0^1 x^0.2 dx = 1/1.2
        let r = integrate(|x: f64| x.powf(0.2), &[0.0, 1.0], tol(1e-10, 1e-10)).unwrap();
        assert!((r.value - 1.0 / 1.2).abs() < 1e-9);
    }

    #[test]
    fn budget_exhaustion_reports_error() {
        let err = integrate(
            |x: f64| (1.0 / x).sin(),
            &[1e-8, 1.0],
            Tolerance {
                abs: 1e-14,
                rel: 1e-14,
                max_subdivisions: 20,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numeric { achieved, .. } if achieved > 0.0));
    }

    #[test]
    fn degenerate_and_bad_points() {
        let r = integrate(|x| x, &[1.0, 1.0], tol(1e-10, 1e-10)).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(integrate(|x| x, &[1.0, 0.0], tol(1e-10, 1e-10)).is_err());
        assert!(integrate(|x| x, &[1.0], tol(1e-10, 1e-10)).is_err());
    }
}
