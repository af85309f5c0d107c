//! Gamma-function helpers used by the coupling generator.

use std::f64::consts::PI;

/// Below this argument the Stirling series is not used directly.
const STIRLING_MIN: f64 = 20.0;

/// `ln Γ(x)` and the sign of `Γ(x)` for any non-pole real `x`.
pub fn ln_gamma_signed(x: f64) -> (f64, f64) {
    let (v, s) = libm::lgamma_r(x);
    (v, if s < 0 { -1.0 } else { 1.0 })
}

/// `ln Γ(a) - ln Γ(b)` for `a, b > 0`, accurate when both arguments are large.
///
/// Subtracting two `lgamma` values loses absolute precision once the
/// individual logarithms reach ~1e6; this routine shifts both arguments into
/// the Stirling regime and differences the series term by term.
pub fn ln_gamma_ratio(a: f64, b: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0);
    let lo = a.min(b);
    if a.max(b) < STIRLING_MIN {
        return libm::lgamma(a) - libm::lgamma(b);
    }
    let shift = if lo < STIRLING_MIN {
        (STIRLING_MIN - lo).ceil() as usize
    } else {
        0
    };
    // ln Γ(a) = ln Γ(a + n) - Σ ln(a + k)
    let delta = a - b;
    let mut correction = 0.0;
    for k in 0..shift {
        correction += (delta / (b + k as f64)).ln_1p();
    }
    let x = a + shift as f64;
    let y = b + shift as f64;
    stirling_difference(x, y) - correction
}

/// `ln Γ(x) - ln Γ(y)` via the Stirling series, `x, y >= 20`.
fn stirling_difference(x: f64, y: f64) -> f64 {
    let delta = x - y;
    let main = (y - 0.5) * (delta / y).ln_1p() + delta * x.ln() - delta;
    main + stirling_series(x) - stirling_series(y)
}

fn stirling_series(x: f64) -> f64 {
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    inv * (1.0 / 12.0
        - inv2
            * (1.0 / 360.0
                - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0 - inv2 * (1.0 / 1188.0)))))
}

/// `sin(π z)` with the argument reduced exactly before multiplying by π.
pub fn sin_pi(z: f64) -> f64 {
    let r = z - 2.0 * (z / 2.0).floor();
    // r in [0, 2)
    if r == 0.0 || r == 1.0 {
        return 0.0;
    }
    if r == 0.5 {
        return 1.0;
    }
    if r == 1.5 {
        return -1.0;
    }
    (PI * r).sin()
}

pub fn is_integer(x: f64) -> bool {
    x.is_finite() && x == x.round()
}
