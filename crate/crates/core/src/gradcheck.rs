//! Central finite differences, the oracle for every backward kernel.

use crate::scalar::Scalar;

pub const DEFAULT_EPS: f64 = 1e-5;

/// `(f(θ + eps·e_i) − f(θ − eps·e_i)) / (2·eps)` for every coordinate.
pub fn finite_difference_gradient<T: Scalar>(mut f: impl FnMut(&[T]) -> T, params: &[T], eps: T) -> Vec<T> {
    assert!(eps > T::zero(), "eps must be positive");
    let mut theta = params.to_vec();
    let two_eps = eps + eps;
    (0..theta.len())
        .map(|i| {
            let orig = theta[i];
            theta[i] = orig + eps;
            let plus = f(&theta);
            theta[i] = orig - eps;
            let minus = f(&theta);
            theta[i] = orig;
            (plus - minus) / two_eps
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`. The floor keeps near-zero gradients
/// from turning rounding noise into large ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}
