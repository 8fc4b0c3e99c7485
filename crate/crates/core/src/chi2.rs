//! Chi-squared distribution function and its inverse, via the regularized
//! incomplete gamma function.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos approximation, ~1e-15 relative).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
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

/// Regularized upper incomplete gamma `Q(a, x) = 1 − P(a, x)`.
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
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut denom = a;
    for _ in 0..10_000 {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
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
    for i in 1..10_000 {
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

fn check_df(df: u32) -> Result<()> {
    if df == 0 {
        return Err(Error::InvalidArgument("chi-squared degrees of freedom must be >= 1".into()));
    }
    Ok(())
}

/// `P(χ²_df ≤ x)`.
pub fn chi2_cdf(df: u32, x: f64) -> Result<f64> {
    check_df(df)?;
    Ok(gamma_p(df as f64 / 2.0, x / 2.0))
}

/// Quantile `F^{-1}_df(p)` of the chi-squared distribution.
///
/// Safeguarded Newton iteration on the CDF inside a shrinking bracket.
pub fn chi2_quantile(df: u32, p: f64) -> Result<f64> {
    check_df(df)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "probability must lie in (0, 1), got {p}"
        )));
    }
    let a = df as f64 / 2.0;
    let k = df as f64;
    // Work on whichever tail is smaller to keep relative precision.
    let upper = p > 0.5;
    let target = if upper { 1.0 - p } else { p };
    let residual = |x: f64| {
        if upper {
            target - gamma_q(a, x / 2.0)
        } else {
            gamma_p(a, x / 2.0) - target
        }
    };

    let mut lo = 0.0;
    let mut hi = k.max(1.0);
    while residual(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    // Wilson–Hilferty starting point, clamped into the bracket.
    let z = normal_quantile(p);
    let wh = k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3);
    let mut x = if wh > lo && wh < hi { wh } else { 0.5 * (lo + hi) };

    for _ in 0..200 {
        let r = residual(x);
        if r == 0.0 {
            return Ok(x);
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let ln_density = (a - 1.0) * (x / 2.0).ln() - x / 2.0 - ln_gamma(a) - std::f64::consts::LN_2;
        let density = ln_density.exp();
        let mut next = x - r / density;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1e-300) {
            return Ok(next);
        }
        x = next;
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(x)
}

// Acklam's rational approximation; only used for a starting value.
fn normal_quantile(p: f64) -> f64 {
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
    let tail = |q: f64| {
        let q = (-2.0 * q.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < 0.02425 {
        tail(p)
    } else if p > 1.0 - 0.02425 {
        -tail(1.0 - p)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_degrees_of_freedom_closed_form() {
        assert_abs_diff_eq!(chi2_quantile(2, 0.99).unwrap(), 9.21034, epsilon = 1e-4);
        assert_abs_diff_eq!(chi2_quantile(2, 0.95).unwrap(), 5.99146, epsilon = 1e-4);
        for p in [0.01, 0.3, 0.5, 0.9, 0.999, 0.999_999] {
            let exact = -2.0 * (1.0_f64 - p).ln();
            assert_abs_diff_eq!(chi2_quantile(2, p).unwrap(), exact, epsilon = 1e-9 * exact.max(1.0));
        }
    }

    #[test]
    fn three_degrees_of_freedom() {
        assert_abs_diff_eq!(chi2_quantile(3, 0.99).unwrap(), 11.3449, epsilon = 1e-3);
    }

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(ln_gamma(10.0), 362_880f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(chi2_quantile(0, 0.5).is_err());
        assert!(chi2_quantile(2, 0.0).is_err());
        assert!(chi2_quantile(2, 1.0).is_err());
        assert!(chi2_quantile(2, f64::NAN).is_err());
        assert!(chi2_cdf(0, 1.0).is_err());
    }

    #[test]
    fn normal_quantile_start_is_close() {
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959_964, epsilon = 1e-6);
        assert_abs_diff_eq!(normal_quantile(0.5), 0.0, epsilon = 1e-12);
    }
}
