//! Log-gamma and the first two derivatives of log-gamma.
//!
//! Orders follow the derivative count of `log Γ`: [`PolyOrder::Digamma`] is
//! `d/dx log Γ(x)` (order 1) and [`PolyOrder::Trigamma`] is
//! `d²/dx² log Γ(x)` (order 2). Many libraries instead label the trigamma
//! function "polygamma of order 1"; here the order is the number of
//! derivatives taken of `log Γ`, one more than that convention.
//!
//! Digamma and trigamma shift the argument up to `x >= 8` with the
//! recurrences `ψ(x+1) = ψ(x) + 1/x` and `ψ'(x+1) = ψ'(x) - 1/x²`, then
//! evaluate the Bernoulli asymptotic series. Log-gamma uses the same
//! Stirling series for large arguments and a Taylor expansion about 2 on
//! `[0.5, 8)` so that relative accuracy survives near the roots at 1 and 2.

#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

/// Derivative order of `log Γ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolyOrder {
    /// `ψ⁽¹⁾ = d/dx log Γ`.
    Digamma,
    /// `ψ⁽²⁾ = d²/dx² log Γ`.
    Trigamma,
}

impl PolyOrder {
    pub fn order(self) -> u32 {
        match self {
            PolyOrder::Digamma => 1,
            PolyOrder::Trigamma => 2,
        }
    }
}

impl TryFrom<u32> for PolyOrder {
    type Error = Error;

    fn try_from(n: u32) -> Result<Self> {
        match n {
            1 => Ok(PolyOrder::Digamma),
            2 => Ok(PolyOrder::Trigamma),
            other => Err(Error::UnsupportedOrder(other)),
        }
    }
}

const SHIFT_THRESHOLD: f64 = 8.0;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_741_8;

// zeta(k) - 1 for k = 2..=31.
const ZETA_MINUS_ONE: [f64; 30] = [
    0.644_934_066_848_226_436_47,
    0.202_056_903_159_594_285_4,
    0.082_323_233_711_138_191_516,
    0.036_927_755_143_369_926_331,
    0.017_343_061_984_449_139_715,
    0.008_349_277_381_922_826_839_8,
    0.004_077_356_197_944_339_378_7,
    0.002_008_392_826_082_214_417_9,
    0.000_994_575_127_818_085_337_15,
    0.000_494_188_604_119_464_558_7,
    0.000_246_086_553_308_048_298_64,
    0.000_122_713_347_578_489_146_75,
    6.124_813_505_870_482_925_9e-5,
    3.058_823_630_702_049_355_2e-5,
    1.528_225_940_865_187_173_3e-5,
    7.637_197_637_899_762_273_6e-6,
    3.817_293_264_999_839_856_5e-6,
    1.908_212_716_553_938_925_7e-6,
    9.539_620_338_727_961_131_5e-7,
    4.769_329_867_878_064_631_2e-7,
    2.384_505_027_277_329_9e-7,
    1.192_199_259_653_110_730_7e-7,
    5.960_818_905_125_947_961_2e-8,
    2.980_350_351_465_228_018_6e-8,
    1.490_155_482_836_504_123_5e-8,
    7.450_711_789_835_429_492e-9,
    3.725_334_024_788_457_054_8e-9,
    1.862_659_723_513_049_006_4e-9,
    9.313_274_324_196_681_828_7e-10,
    4.656_629_065_033_784_073e-10,
];

// B_{2k} / (2k (2k - 1)) for k = 1..=8.
const STIRLING: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

// B_{2k} / (2k) for k = 1..=8.
const DIGAMMA_ASYMPTOTIC: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32_760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
];

// B_{2k} for k = 1..=8.
const TRIGAMMA_ASYMPTOTIC: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// `log Γ(2 + z)` for `|z| <= 0.5` from its Taylor series about 2.
fn ln_gamma_near_two(z: f64) -> f64 {
    let mut sum = 0.0;
    let mut power = z;
    let mut sign = 1.0;
    for (i, zeta) in ZETA_MINUS_ONE.iter().enumerate() {
        power *= z;
        let k = (i + 2) as f64;
        sum += sign * zeta * power / k;
        sign = -sign;
    }
    (1.0 - EULER_GAMMA) * z + sum
}

fn ln_gamma_stirling(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut power = inv;
    for c in STIRLING {
        series += c * power;
        power *= inv2;
    }
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series
}

/// Unchecked `log Γ(x)` for `x > 0`; returns NaN outside the domain.
pub fn ln_gamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    if x >= SHIFT_THRESHOLD {
        return ln_gamma_stirling(x);
    }
    if x < 0.5 {
        // Γ(x) = Γ(x + 1) / x
        return ln_gamma(x + 1.0) - x.ln();
    }
    if x < 1.5 {
        // Γ(x) = Γ(x + 1) / x, with x + 1 in [1.5, 2.5)
        let z = x - 1.0;
        return ln_gamma_near_two(z) - z.ln_1p();
    }
    // Reduce x in [1.5, 8) to [1.5, 2.5) via Γ(x) = (x - 1) Γ(x - 1).
    let mut y = x;
    let mut product = 1.0;
    while y >= 2.5 {
        y -= 1.0;
        product *= y;
    }
    ln_gamma_near_two(y - 2.0) + product.ln()
}

/// Unchecked digamma `d/dx log Γ(x)`.
pub fn digamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < SHIFT_THRESHOLD {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    let mut power = inv2;
    for c in DIGAMMA_ASYMPTOTIC {
        series += c * power;
        power *= inv2;
    }
    shift + x.ln() - 0.5 / x - series
}

/// Unchecked trigamma `d²/dx² log Γ(x)`.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) || !x.is_finite() {
        return f64::NAN;
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < SHIFT_THRESHOLD {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut power = inv2 * inv;
    for c in TRIGAMMA_ASYMPTOTIC {
        series += c * power;
        power *= inv2;
    }
    shift + inv + 0.5 * inv2 + series
}

fn check_positive(x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("argument must be finite and > 0, got {x}")))
    }
}

/// `log Γ(x)` for finite `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive(x)?;
    Ok(ln_gamma(x))
}

/// `ψ⁽ⁿ⁾(x) = dⁿ/dxⁿ log Γ(x)` for `n ∈ {1, 2}`.
pub fn polygamma(order: PolyOrder, x: f64) -> Result<f64> {
    check_positive(x)?;
    Ok(match order {
        PolyOrder::Digamma => digamma(x),
        PolyOrder::Trigamma => trigamma(x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(got: f64, want: f64) -> f64 {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }

    fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
        let (a, b) = (lo.ln(), hi.ln());
        (0..points)
            .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
            .collect()
    }

    // Σ_{k >= start} 1/k², direct sum plus an Euler-Maclaurin tail.
    fn inverse_square_tail(start: u64) -> f64 {
        let cutoff = 100_000u64;
        let head: f64 = (start..cutoff).rev().map(|k| 1.0 / (k as f64 * k as f64)).sum();
        let n = cutoff as f64;
        head + 1.0 / n + 0.5 / (n * n) + 1.0 / (6.0 * n * n * n)
    }

    // -γ from ψ(1) = ψ(N + 1) - H_N with ψ(N + 1) expanded for large N.
    fn digamma_at_one_oracle() -> f64 {
        let n = 1_000_000u64;
        let harmonic: f64 = (1..=n).rev().map(|k| 1.0 / k as f64).sum();
        let m = (n + 1) as f64;
        let psi_m = m.ln() - 0.5 / m - 1.0 / (12.0 * m * m);
        psi_m - harmonic
    }

    #[test]
    fn log_gamma_at_one_and_two_is_zero() {
        assert_eq!(log_gamma(1.0).unwrap(), 0.0);
        assert_eq!(log_gamma(2.0).unwrap(), 0.0);
    }

    #[test]
    fn log_gamma_half_is_log_sqrt_pi() {
        let oracle = 0.5 * std::f64::consts::PI.ln();
        assert!((oracle - 0.572_364_942_9).abs() < 1e-10);
        assert!(rel_err(log_gamma(0.5).unwrap(), oracle) < 1e-13);
    }

    #[test]
    fn log_gamma_matches_factorials() {
        let mut ln_fact = 0.0f64;
        for k in 1..170u32 {
            // log Γ(k + 1) = log k!
            ln_fact += (k as f64).ln();
            let got = log_gamma(k as f64 + 1.0).unwrap();
            assert!(rel_err(got, ln_fact) < 1e-13, "k={k} got={got} want={ln_fact}");
        }
    }

    #[test]
    fn log_gamma_half_integers() {
        // Γ(k + 1/2) = (2k)! √π / (4^k k!)
        let mut value = 0.5 * std::f64::consts::PI.ln();
        for k in 1..60u32 {
            value += (k as f64 - 0.5).ln();
            let got = log_gamma(k as f64 + 0.5).unwrap();
            assert!(rel_err(got, value) < 1e-12, "k={k}");
        }
    }

    #[test]
    fn log_gamma_near_roots_keeps_relative_accuracy() {
        // Values from a 40-digit reference evaluation.
        let cases = [
            (1.0001, -5.771_334_222_047_762_3e-5),
            (0.999, 5.780_385_328_913_797_2e-4),
            (2.001, 4.231_067_348_001_636_3e-4),
            (1.999, -4.224_618_006_921_537_8e-4),
            (1e-3, 6.907_178_885_383_853_7),
        ];
        for (x, want) in cases {
            let got = log_gamma(x).unwrap();
            assert!(rel_err(got, want) < 1e-12, "x={x} got={got:e} want={want:e}");
        }
    }

    #[test]
    fn log_gamma_rejects_non_positive() {
        assert!(matches!(log_gamma(0.0), Err(Error::Domain(_))));
        assert!(matches!(log_gamma(-1.5), Err(Error::Domain(_))));
        assert!(matches!(log_gamma(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(log_gamma(f64::INFINITY), Err(Error::Domain(_))));
    }

    #[test]
    fn digamma_at_one_is_minus_euler_gamma() {
        let oracle = digamma_at_one_oracle();
        assert!((oracle + 0.577_215_664_9).abs() < 1e-10);
        let got = polygamma(PolyOrder::Digamma, 1.0).unwrap();
        assert!(rel_err(got, oracle) < 1e-10, "got={got} oracle={oracle}");
    }

    #[test]
    fn trigamma_at_one_and_two_are_basel_sums() {
        let at_one = inverse_square_tail(1);
        let at_two = inverse_square_tail(2);
        assert!((at_one - 1.644_934_066_8).abs() < 1e-10);
        assert!((at_two - 0.644_934_066_8).abs() < 1e-10);
        assert!(rel_err(polygamma(PolyOrder::Trigamma, 1.0).unwrap(), at_one) < 1e-10);
        assert!(rel_err(polygamma(PolyOrder::Trigamma, 2.0).unwrap(), at_two) < 1e-10);
    }

    #[test]
    fn recurrences_hold_on_log_grid() {
        for x in log_grid(0.1, 100.0, 200) {
            let d = digamma(x + 1.0) - (digamma(x) + 1.0 / x);
            // Digamma has a root near 1.4616; compare against the larger term.
            let scale = digamma(x + 1.0).abs().max(1.0 / x);
            assert!(d.abs() <= 1e-10 * scale, "digamma recurrence at {x}");
            let t = trigamma(x + 1.0);
            let want = trigamma(x) - 1.0 / (x * x);
            assert!(rel_err(t, want) < 1e-10, "trigamma recurrence at {x}");
        }
    }

    #[test]
    fn digamma_is_derivative_of_log_gamma() {
        let h = 1e-5;
        for x in log_grid(0.5, 50.0, 100) {
            let fd = (ln_gamma(x + h) - ln_gamma(x - h)) / (2.0 * h);
            let psi = digamma(x);
            // Skip the immediate neighbourhood of the digamma root.
            let tol = 1e-6 * psi.abs().max(1e-3);
            assert!((fd - psi).abs() <= tol, "x={x} fd={fd} psi={psi}");
        }
    }

    #[test]
    fn trigamma_positive_and_decreasing() {
        let grid = log_grid(1e-2, 1e3, 400);
        let values: Vec<f64> = grid.iter().map(|&x| trigamma(x)).collect();
        assert!(values.iter().all(|&v| v > 0.0));
        assert!(values.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn polygamma_matches_reference_values() {
        // 40-digit reference values.
        let cases = [
            (PolyOrder::Digamma, 0.01, -100.560_885_457_868_67),
            (PolyOrder::Digamma, 2.5, 0.703_156_640_645_243_2),
            (PolyOrder::Digamma, 1000.0, 6.907_255_195_648_812_1),
            (PolyOrder::Trigamma, 0.01, 10_001.621_213_528_313),
            (PolyOrder::Trigamma, 2.5, 0.490_357_756_100_234_86),
            (PolyOrder::Trigamma, 1000.0, 0.001_000_500_166_666_633_3),
        ];
        for (order, x, want) in cases {
            let got = polygamma(order, x).unwrap();
            assert!(rel_err(got, want) < 1e-10, "{order:?} x={x} got={got} want={want}");
        }
    }

    #[test]
    fn poly_order_conversion() {
        assert_eq!(PolyOrder::try_from(1).unwrap(), PolyOrder::Digamma);
        assert_eq!(PolyOrder::try_from(2).unwrap(), PolyOrder::Trigamma);
        assert_eq!(PolyOrder::try_from(3), Err(Error::UnsupportedOrder(3)));
        assert_eq!(PolyOrder::try_from(0), Err(Error::UnsupportedOrder(0)));
        assert_eq!(PolyOrder::Trigamma.order(), 2);
    }

    #[test]
    fn polygamma_rejects_non_positive() {
        assert!(polygamma(PolyOrder::Digamma, 0.0).is_err());
        assert!(polygamma(PolyOrder::Trigamma, -2.0).is_err());
    }
}
