//! Zeroth-order Bessel function of the first kind.
//!
//! Power series for |x| <= 12, Hankel asymptotic expansion beyond.

use std::f64::consts::{FRAC_PI_4, PI};

const SERIES_LIMIT: f64 = 12.0;

pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= SERIES_LIMIT {
        series(ax)
    } else {
        hankel(ax)
    }
}

/// sum_k (-x^2/4)^k / (k!)^2
fn series(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) && k > x {
            return sum;
        }
        k += 1.0;
        if k > 200.0 {
            return sum;
        }
    }
}

/// J0(x) ~ sqrt(2/(pi x)) [P cos(x - pi/4) - Q sin(x - pi/4)], summed until
/// the asymptotic terms stop shrinking.
fn hankel(x: f64) -> f64 {
    let inv8x = 1.0 / (8.0 * x);
    // a_k = prod_{j<=k} -(2j-1)^2 / (k! 8^k), divided by x^k as we go.
    let mut a = 1.0;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut prev = f64::INFINITY;
    for k in 1..100 {
        let odd = (2 * k - 1) as f64;
        a *= -(odd * odd) * inv8x / k as f64;
        if a.abs() >= prev || a.abs() < 1e-18 {
            break;
        }
        prev = a.abs();
        // P takes the even-indexed terms with sign (-1)^(k/2), Q the odd ones.
        match k % 4 {
            0 => p += a,
            1 => q += a,
            2 => p -= a,
            _ => q -= a,
        }
    }
    let chi = x - FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}
