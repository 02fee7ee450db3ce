//! Scalar special functions: log-gamma, digamma, trigamma, the standard
//! normal distribution and the chi-squared tail.
//!
//! The checked functions (`log_gamma`, `digamma`, ...) validate their domain
//! and return [`Error::Domain`]. The `ln_gamma`/`psi`/`psi1` family skips the
//! check and is what the likelihood code calls on its hot path.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use crate::error::{Error, Result};

pub(crate) const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument the recurrences shift upward before using the
/// asymptotic series.
const ASYMPTOTIC_MIN: f64 = 10.0;

fn check_positive(name: &'static str, u: f64) -> Result<()> {
    if u > 0.0 && u.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            function: name,
            value: u,
        })
    }
}

/// `log Γ(u)` for `u > 0`.
pub fn log_gamma(u: f64) -> Result<f64> {
    check_positive("log_gamma", u)?;
    Ok(ln_gamma(u))
}

/// Digamma `ψ(u) = d/du log Γ(u)` for `u > 0`.
pub fn digamma(u: f64) -> Result<f64> {
    check_positive("digamma", u)?;
    Ok(psi(u))
}

/// Trigamma `ψ'(u)` for `u > 0`.
pub fn trigamma(u: f64) -> Result<f64> {
    check_positive("trigamma", u)?;
    Ok(psi1(u))
}

/// Stirling correction `log Γ(x) - [(x - 1/2) log x - x + log √(2π)]`,
/// accurate to double precision for `x >= 10`.
pub(crate) fn stirling_correction(x: f64) -> f64 {
    let r = 1.0 / x;
    let r2 = r * r;
    r * (1.0 / 12.0
        + r2 * (-1.0 / 360.0
            + r2 * (1.0 / 1260.0
                + r2 * (-1.0 / 1680.0
                    + r2 * (1.0 / 1188.0
                        + r2 * (-691.0 / 360_360.0
                            + r2 * (1.0 / 156.0 + r2 * (-3617.0 / 122_400.0))))))))
}

/// `log Γ(x)` minus its Stirling leading part, for any `x > 0`.
pub(crate) fn ln_gamma_remainder(x: f64) -> f64 {
    if x >= ASYMPTOTIC_MIN {
        stirling_correction(x)
    } else {
        ln_gamma(x) - ((x - 0.5) * x.ln() - x + HALF_LN_2PI)
    }
}

/// Unchecked `log Γ(x)`; NaN for non-positive input.
pub fn ln_gamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    // Shift to x >= 15 so the eight-term Stirling series is exact to rounding.
    let mut shifted = x;
    let mut product = 1.0;
    while shifted < 15.0 {
        product *= shifted;
        shifted += 1.0;
    }
    let stirling =
        (shifted - 0.5) * shifted.ln() - shifted + HALF_LN_2PI + stirling_correction(shifted);
    stirling - product.ln()
}

/// `ψ(x) - log x`. Stays accurate when the caller needs differences of
/// digammas at large, nearly equal arguments.
pub fn psi_minus_ln(x: f64) -> f64 {
    if x >= ASYMPTOTIC_MIN {
        let r = 1.0 / x;
        let r2 = r * r;
        -0.5 * r
            - r2 * (1.0 / 12.0
                + r2 * (-1.0 / 120.0
                    + r2 * (1.0 / 252.0
                        + r2 * (-1.0 / 240.0
                            + r2 * (1.0 / 132.0
                                + r2 * (-691.0 / 32_760.0
                                    + r2 * (1.0 / 12.0 + r2 * (-3617.0 / 8160.0))))))))
    } else {
        psi(x) - x.ln()
    }
}

/// Unchecked digamma.
pub fn psi(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut shifted = x;
    let mut acc = 0.0;
    while shifted < ASYMPTOTIC_MIN {
        acc -= 1.0 / shifted;
        shifted += 1.0;
    }
    acc + shifted.ln() + psi_minus_ln(shifted)
}

/// `ψ'(x) - 1/x - 1/(2x²)`, the part of the trigamma function that survives
/// cancellation in the dispersion weights.
pub fn psi1_remainder(x: f64) -> f64 {
    if x >= ASYMPTOTIC_MIN {
        let r = 1.0 / x;
        let r2 = r * r;
        r * r2
            * (1.0 / 6.0
                + r2 * (-1.0 / 30.0
                    + r2 * (1.0 / 42.0
                        + r2 * (-1.0 / 30.0
                            + r2 * (5.0 / 66.0
                                + r2 * (-691.0 / 2730.0 + r2 * (7.0 / 6.0 + r2 * (-3617.0 / 510.0))))))))
    } else {
        psi1(x) - 1.0 / x - 0.5 / (x * x)
    }
}

/// Unchecked trigamma.
pub fn psi1(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut shifted = x;
    let mut acc = 0.0;
    while shifted < ASYMPTOTIC_MIN {
        acc += 1.0 / (shifted * shifted);
        shifted += 1.0;
    }
    acc + 1.0 / shifted + 0.5 / (shifted * shifted) + psi1_remainder(shifted)
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF `Φ(x)`.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Two-sided normal tail probability `2 Φ(-|z|)`.
pub fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / SQRT_2).min(1.0)
}

/// Standard normal quantile `Φ⁻¹(p)`, `0 < p < 1`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain {
            function: "std_normal_quantile",
            value: p,
        });
    }
    Ok(normal_quantile_unchecked(p))
}

pub(crate) fn normal_quantile_unchecked(p: f64) -> f64 {
    if p > 0.5 {
        return -lower_normal_quantile(1.0 - p);
    }
    lower_normal_quantile(p)
}

// Acklam's rational approximation (relative error ~1e-9) followed by one
// Halley step against the erfc-based CDF. Valid for 0 < p <= 0.5.
fn lower_normal_quantile(p: f64) -> f64 {
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

    if p == 0.5 {
        return 0.0;
    }
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    let e = std_normal_cdf(x) - p;
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_continued_fraction(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..1000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..1000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Chi-squared CDF with `dof` degrees of freedom.
pub fn chi_squared_cdf(x: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    gamma_p(0.5 * dof as f64, 0.5 * x)
}

/// Chi-squared upper tail probability, used for p-values.
pub fn chi_squared_sf(x: f64, dof: usize) -> f64 {
    if dof == 0 {
        return if x > 0.0 { 0.0 } else { 1.0 };
    }
    gamma_q(0.5 * dof as f64, 0.5 * x).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn log_gamma_reference_values() {
        // log Γ vanishes at 1 and 2, so only an absolute bound is meaningful there
        assert!(log_gamma(1.0).unwrap().abs() < 1e-14);
        assert!(log_gamma(2.0).unwrap().abs() < 1e-14);
        assert!((log_gamma(0.5).unwrap() - 0.572_364_942_924_700_1).abs() < 1e-14);
        // log(9!) from the exact integer factorial
        let exact = (362_880f64).ln();
        assert!(rel(log_gamma(10.0).unwrap(), exact) < 1e-14);
        // high-precision reference values
        assert!(rel(ln_gamma(3.7), 1.428_072_326_665_387_9) < 1e-13);
        assert!(rel(ln_gamma(1e-6), 13.815_509_980_749_432) < 1e-13);
        assert!(rel(ln_gamma(1e8), 1_742_068_066.103_834_7) < 1e-13);
        assert!(rel(ln_gamma(123.456), 469.605_547_129_929_47) < 1e-13);
    }

    #[test]
    fn log_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for k in 1..60u32 {
            let x = k as f64 + 1.0;
            fact *= k as f64;
            let err = (ln_gamma(x) - fact.ln()).abs();
            assert!(err < 1e-13 * fact.ln().max(1.0), "x={x}");
        }
    }

    #[test]
    fn domain_errors() {
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.5).is_err());
        assert!(digamma(0.0).is_err());
        assert!(trigamma(-2.0).is_err());
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
        assert!(std_normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn digamma_reference_values() {
        assert!(rel(digamma(1.0).unwrap(), -EULER_GAMMA) < 1e-14);
        let half = -EULER_GAMMA - 2.0 * std::f64::consts::LN_2;
        assert!(rel(digamma(0.5).unwrap(), half) < 1e-14);
        assert!(rel(psi(1e-6), -1_000_000.577_214_02) < 1e-13);
        assert!(rel(psi(1e8), 18.420_680_738_952_365) < 1e-14);
    }

    #[test]
    fn digamma_matches_log_gamma_difference() {
        let h = 1e-5;
        let u = 3.7;
        let fd = (ln_gamma(u + h) - ln_gamma(u - h)) / (2.0 * h);
        assert!((psi(u) - fd).abs() < 1e-6);
    }

    #[test]
    fn trigamma_reference_values() {
        assert!(rel(trigamma(1.0).unwrap(), PI * PI / 6.0) < 1e-14);
        assert!(rel(trigamma(0.5).unwrap(), PI * PI / 2.0) < 1e-14);
        assert!(rel(psi1(1e-6), 1_000_000_000_001.644_9) < 1e-13);
        assert!(rel(psi1(1e8), 1.000_000_005e-8) < 1e-13);
        let h = 1e-5;
        let fd = (psi(2.25 + h) - psi(2.25 - h)) / (2.0 * h);
        assert!((psi1(2.25) - fd).abs() < 1e-6);
        assert!(rel(psi1(2.25), 0.557_329_154_507_110_7) < 1e-13);
    }

    #[test]
    fn remainders_are_consistent_across_the_branch_point() {
        for &x in &[9.5, 9.999, 10.0, 10.001, 11.0, 50.0] {
            assert!((psi_minus_ln(x) - (psi(x) - x.ln())).abs() < 1e-14);
            let direct = psi1(x) - 1.0 / x - 0.5 / (x * x);
            assert!((psi1_remainder(x) - direct).abs() < 1e-15, "x={x}");
        }
    }

    #[test]
    fn recurrences_hold_on_grid() {
        let mut u = 1e-3;
        while u < 1e4 {
            let d = psi(u + 1.0) - (psi(u) + 1.0 / u);
            assert!(d.abs() <= 1e-10 * psi(u + 1.0).abs().max(1.0), "u={u}");
            let t = psi1(u + 1.0) - (psi1(u) - 1.0 / (u * u));
            assert!(t.abs() <= 1e-10 * psi1(u + 1.0).abs().max(1e-300) + 1e-15, "u={u}");
            u *= 1.37;
        }
    }

    #[test]
    fn normal_quantile_values() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        assert!((std_normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((normal_quantile_unchecked(1e-10) + 6.361_340_902_404_056).abs() < 1e-9);
    }

    #[test]
    fn normal_quantile_matches_bisection_of_cdf() {
        let target = 0.8;
        let (mut lo, mut hi) = (-10.0f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if std_normal_cdf(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((std_normal_quantile(target).unwrap() - 0.5 * (lo + hi)).abs() < 1e-9);
    }

    #[test]
    fn normal_quantile_is_odd() {
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            let a = normal_quantile_unchecked(p);
            let b = normal_quantile_unchecked(1.0 - p);
            assert!((a + b).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn chi_squared_two_dof_closed_form() {
        for &x in &[0.0, 0.01, 0.5, 1.0, 3.0, 5.991, 10.0, 40.0] {
            let closed = 1.0 - (-x / 2.0f64).exp();
            assert!((chi_squared_cdf(x, 2) - closed).abs() < 1e-14, "x={x}");
            assert!((chi_squared_sf(x, 2) - (-x / 2.0f64).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn chi_squared_one_dof_matches_normal() {
        for &z in &[0.3, 1.0, 1.959_963_984_540_054, 3.0] {
            let p = chi_squared_sf(z * z, 1);
            assert!((p - normal_two_sided_p(z)).abs() < 1e-13);
        }
        assert!((chi_squared_sf(3.841_458_820_694_124, 1) - 0.05).abs() < 1e-12);
    }
}
