//! Special functions (log-gamma, digamma, trigamma) and stable log/exp
//! primitives used by the Dirichlet losses.
//!
//! log-gamma uses the Lanczos approximation (g = 7, 9 coefficients);
//! digamma/trigamma shift their argument up to >= 6 by recurrence and then
//! evaluate a Bernoulli-number asymptotic series. Everything is f64.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_74; // ln(2*pi)/2

/// Natural log of the Gamma function for x > 0.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(log_gamma_unchecked(x))
}

pub(crate) fn log_gamma_unchecked(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    // Gamma(1) = Gamma(2) = 1 exactly; the series would leave ~1e-15 residue.
    if x == 1.0 || x == 2.0 {
        return 0.0;
    }
    if x < 0.5 {
        // ln Gamma(x) = ln Gamma(x+1) - ln x, well conditioned near 0
        return lanczos_ln_gamma(x + 1.0) - x.ln();
    }
    lanczos_ln_gamma(x)
}

fn lanczos_ln_gamma(x: f64) -> f64 {
    let mut series = LANCZOS_COEF[0];
    for (k, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        series += c / (x - 1.0 + k as f64);
    }
    let t = x + LANCZOS_G - 0.5;
    HALF_LN_TWO_PI + (x - 0.5) * t.ln() - t + series.ln()
}

// Asymptotic tail of psi(x): coefficients of x^{-2k} in
// -sum B_{2k} / (2k x^{2k}), k = 1..8.
const DIGAMMA_TAIL: [f64; 8] = [
    -1.0 / 12.0,
    1.0 / 120.0,
    -1.0 / 252.0,
    1.0 / 240.0,
    -1.0 / 132.0,
    691.0 / 32760.0,
    -1.0 / 12.0,
    3617.0 / 8160.0,
];

const SHIFT_THRESHOLD: f64 = 6.0;

/// Digamma function psi(x) = d/dx ln Gamma(x), for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("digamma requires x > 0, got {x}")));
    }
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut result = 0.0;
    let mut z = x;
    while z < SHIFT_THRESHOLD {
        result -= 1.0 / z; // psi(z) = psi(z+1) - 1/z
        z += 1.0;
    }
    let w = 1.0 / (z * z);
    let mut tail = 0.0;
    for c in DIGAMMA_TAIL.iter().rev() {
        tail = (tail + c) * w;
    }
    result + z.ln() - 0.5 / z + tail
}

// Asymptotic tail of psi'(x): coefficients of x^{-(2k+1)} in
// sum B_{2k} / x^{2k+1}, k = 1..7.
const TRIGAMMA_TAIL: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

/// Trigamma function psi'(x), for x > 0.
pub fn trigamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("trigamma requires x > 0, got {x}")));
    }
    Ok(trigamma_unchecked(x))
}

pub(crate) fn trigamma_unchecked(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut result = 0.0;
    let mut z = x;
    while z < SHIFT_THRESHOLD {
        result += 1.0 / (z * z); // psi'(z) = psi'(z+1) + 1/z^2
        z += 1.0;
    }
    let w = 1.0 / (z * z);
    let mut tail = 0.0;
    for c in TRIGAMMA_TAIL.iter().rev() {
        tail = (tail + c) * w;
    }
    result + 1.0 / z + 0.5 * w + tail / z
}

/// ln(e^o + gamma) without overflow for |o| up to ~700.
///
/// This is logaddexp(o, ln gamma); the result is always >= max(o, ln gamma).
pub fn log_exp_plus_const(o: f64, gamma: f64) -> f64 {
    assert!(gamma > 0.0, "log_exp_plus_const requires gamma > 0");
    let lg = gamma.ln();
    let m = o.max(lg);
    m + (-(o - lg).abs()).exp().ln_1p()
}

/// Stable ln(sum_i e^{x_i}) over a non-empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    debug_assert!(!xs.is_empty());
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}
