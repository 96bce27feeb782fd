//! Scalar math helpers.
//!
//! Every transcendental in the crate routes through `libm` rather than the
//! std float methods: `libm` is pure Rust, available under `no_std`, and —
//! more importantly — bit-identical across platforms, which keeps seeded
//! rollouts and generated dataset files byte-for-byte reproducible anywhere.

pub use libm::{cos, exp, fabs, floor, log, sin, sqrt, tanh};

/// Clamp `x` into `[lo, hi]`.
///
/// Identical to `f64::clamp` but kept local so call sites don't silently pick
/// up NaN-propagation differences if the std semantics ever shift.
#[inline]
pub fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    debug_assert!(lo <= hi);
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// Wrap an angle into `[-pi, pi)`.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    use core::f64::consts::PI;
    let two_pi = 2.0 * PI;
    let wrapped = theta - two_pi * floor((theta + PI) / two_pi);
    // floor() guarantees the result lies in [-pi, pi); the debug assert
    // documents the contract.
    debug_assert!((-PI..PI).contains(&wrapped) || wrapped.is_nan());
    wrapped
}

/// Mean of a slice. Empty input returns 0.0.
#[inline]
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation of a slice (divides by `n`, not `n - 1`).
#[inline]
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
    sqrt(var)
}

/// Median of a slice (average of the middle pair for even lengths).
/// Empty input returns 0.0.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut sorted: alloc::vec::Vec<f64> = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("median over NaN"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}
