//! Digamma and trigamma on the positive real axis.
//!
//! Both functions push the argument above [`ASYMPTOTIC_THRESHOLD`] with the
//! upward recurrences ψ(x) = ψ(x+1) − 1/x and ψ′(x) = ψ′(x+1) + 1/x², then
//! evaluate the Bernoulli-number asymptotic expansion.

use crate::error::{Error, Result};

const ASYMPTOTIC_THRESHOLD: f64 = 10.0;

/// B_{2k}/(2k) for k = 1..7.
const DIGAMMA_COEFFS: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// B_{2k} for k = 1..7.
const TRIGAMMA_COEFFS: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

fn check_domain(function: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { function, value: x })
    }
}

/// ψ(x), the logarithmic derivative of the gamma function, for x > 0.
pub fn digamma(x: f64) -> Result<f64> {
    check_domain("digamma", x)?;
    Ok(digamma_unchecked(x))
}

/// ψ′(x) for x > 0.
pub fn trigamma(x: f64) -> Result<f64> {
    check_domain("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

/// Digamma without the domain check. Callers guarantee `x > 0`.
pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Horner in 1/x² over the correction terms.
    let mut series = 0.0;
    for c in DIGAMMA_COEFFS.iter().rev() {
        series = series * inv2 + c;
    }
    shift + libm::log(x) - 0.5 / x - series * inv2
}

/// Trigamma without the domain check. Callers guarantee `x > 0`.
pub(crate) fn trigamma_unchecked(mut x: f64) -> f64 {
    let mut shift = 0.0;
    while x < ASYMPTOTIC_THRESHOLD {
        shift += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    for c in TRIGAMMA_COEFFS.iter().rev() {
        series = series * inv2 + c;
    }
    shift + inv + 0.5 * inv2 + series * inv2 * inv
}
