//! Test oracles shared by integration targets.
#![allow(dead_code)]

use rand::seq::index::sample;
use rand::Rng;

/// Central finite difference of `f` at `params` along coordinate `idx`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, params: &[f64], idx: usize, eps: f64) -> f64 {
    let mut p = params.to_vec();
    p[idx] = params[idx] + eps;
    let up = f(&p);
    p[idx] = params[idx] - eps;
    let down = f(&p);
    (up - down) / (2.0 * eps)
}

/// Relative error with a floor on the denominator so that vanishing
/// gradients are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst relative error over `n` distinct random coordinates (or all of them
/// when there are fewer than `n`).
pub fn max_gradient_error(
    f: &mut dyn FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    n: usize,
    rng: &mut impl Rng,
) -> (f64, usize) {
    assert_eq!(params.len(), analytic.len());
    let picks = sample(rng, params.len(), n.min(params.len())).into_vec();
    let mut worst = 0.0f64;
    for &idx in &picks {
        let num = central_difference(f, params, idx, 1e-5);
        worst = worst.max(relative_error(analytic[idx], num));
    }
    (worst, picks.len())
}
