//! Standard normal distribution primitives.
//!
//! Everything here is implemented in-house so that results are bit-reproducible
//! across platforms: `erfc` combines a positive-term series (small arguments)
//! with a Lentz continued fraction (large arguments), and the quantile function
//! starts from a rational approximation and is polished with one Halley step
//! against the CDF, which brings it to roughly machine precision.

use crate::error::{FloodgateError, Result};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_5;
const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// Switch point between the series and the continued fraction.
const ERFC_SPLIT: f64 = 2.5;

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// erf(x) for |x| < ERFC_SPLIT via erf(x) = 2/sqrt(pi) e^{-x^2} sum 2^n x^{2n+1} / (2n+1)!!.
/// All terms are positive so there is no cancellation.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x2 / (2.0 * n + 1.0);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

/// erfc(x) for x >= ERFC_SPLIT using the continued fraction
/// sqrt(pi) e^{x^2} erfc(x) = 1 / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))).
fn erfc_continued_fraction(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 * 0.5;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        d = 1.0 / d;
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
}

pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x >= ERFC_SPLIT {
        if x > 27.3 {
            return 0.0;
        }
        erfc_continued_fraction(x)
    } else if x <= -ERFC_SPLIT {
        2.0 - erfc(-x)
    } else {
        1.0 - erf_series(x)
    }
}

pub fn erf(x: f64) -> f64 {
    if x.abs() < ERFC_SPLIT {
        erf_series(x)
    } else {
        1.0 - erfc(x)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail 1 - Phi(x), accurate far into the right tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

// Rational approximation of the inverse CDF (relative error about 1e-9).
const A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const P_LOW: f64 = 0.02425;

fn inverse_cdf_rational(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Phi^{-1}(p) for p <= 0.5, refined by a Halley step on the CDF.
fn lower_inverse(p: f64) -> f64 {
    let x = inverse_cdf_rational(p);
    let e = normal_cdf(x) - p;
    let u = e * SQRT_2PI * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Inverse standard normal CDF, Phi^{-1}(p).
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(FloodgateError::Domain(format!(
            "probability must lie in (0,1), got {p}"
        )));
    }
    Ok(if p > 0.5 {
        -lower_inverse(1.0 - p)
    } else {
        lower_inverse(p)
    })
}

/// Upper-tail standard normal quantile: the `z` with `P(N(0,1) > z) = p`.
///
/// This is the `z_alpha` used in every one-sided bound of the crate, so
/// `normal_quantile(0.05)` is about 1.645.
pub fn normal_quantile(p: f64) -> Result<f64> {
    Ok(-inverse_normal_cdf(p)?)
}

/// Gauss-Hermite nodes and weights for integrals against `exp(-t^2)`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 1.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf - 1.0) * z * p2 - (jf - 1.0) * p3) / jf;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Expectation of `f(N(mean, sd^2))` by Gauss-Hermite quadrature.
pub struct NormalExpectation {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl NormalExpectation {
    pub fn new(order: usize) -> Self {
        let (t, w) = gauss_hermite(order);
        let scale = std::f64::consts::PI.sqrt();
        NormalExpectation {
            nodes: t.iter().map(|t| t * SQRT_2).collect(),
            weights: w.iter().map(|w| w / scale).collect(),
        }
    }

    pub fn expect(&self, mean: f64, sd: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| w * f(mean + sd * t))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        // Phi(1.96) = 0.9750021048517795
        assert!((normal_cdf(1.96) - 0.975_002_104_851_779_5).abs() < 1e-15);
        // 1 - Phi(6) = 9.865876450376946e-10
        assert!((normal_sf(6.0) / 9.865_876_450_376_946e-10 - 1.0).abs() < 1e-12);
        assert!(
            (normal_cdf(-3.0) / 1.349_898_031_630_094_6e-3 - 1.0).abs() < 1e-13,
            "{}",
            normal_cdf(-3.0)
        );
    }

    #[test]
    fn erf_is_continuous_at_the_split() {
        let lo = 1.0 - erf_series(ERFC_SPLIT - 1e-12);
        let hi = erfc_continued_fraction(ERFC_SPLIT);
        assert!((lo - hi).abs() < 1e-14);
    }

    #[test]
    fn quantile_rejects_out_of_domain() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(normal_quantile(p).is_err());
        }
    }

    #[test]
    fn quantile_is_upper_tail() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.05).unwrap() - 1.644_853_626_951_472_2).abs() < 1e-12);
        assert!(normal_quantile(0.95).unwrap() < 0.0);
    }

    #[test]
    fn quantile_round_trips_through_cdf() {
        for &p in &[
            1e-12,
            1e-8,
            1e-4,
            0.01,
            0.02425,
            0.1,
            0.3,
            0.5,
            0.77,
            0.99,
            1.0 - 1e-9,
        ] {
            let z = normal_quantile(p).unwrap();
            assert!((normal_sf(z) - p).abs() <= 1e-9 * p.max(1e-3), "p={p}");
        }
    }

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(10);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        let i18: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((i18 - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_rule_integrates_moments() {
        let rule = NormalExpectation::new(30);
        assert!((rule.expect(0.0, 1.0, |_| 1.0) - 1.0).abs() < 1e-13);
        assert!((rule.expect(0.0, 1.0, |t| t * t) - 1.0).abs() < 1e-12);
        assert!((rule.expect(1.0, 2.0, |t| t * t) - 5.0).abs() < 1e-11);
        assert!((rule.expect(0.0, 1.0, |t| t.powi(4)) - 3.0).abs() < 1e-11);
        // E[exp(t)] = exp(1/2)
        assert!((rule.expect(0.0, 1.0, f64::exp) - 0.5f64.exp()).abs() < 1e-12);
    }
}
