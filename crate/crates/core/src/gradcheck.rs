//! Central finite differences for validating exact gradients.

use crate::env::Verifier;
use crate::error::Result;
use crate::objectives::{check_k, pow_int};
use crate::policy::{prob_with_params, ParamVector, Policy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    /// Step size of the central difference.
    pub h: f64,
    /// Accepted relative error (see [`relative_error`]).
    pub rel_tol: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            rel_tol: 1e-6,
        }
    }
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn central_difference<F>(x: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + h;
            let up = f(&work);
            work[i] = orig - h;
            let down = f(&work);
            work[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|)`; zero when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Finite-difference gradient of `J1(theta)`, with `J1` summed over the
/// correct set straight from the logits.
pub fn fd_grad_j1(policy: &Policy, verifier: &Verifier, h: f64) -> Result<ParamVector> {
    verifier.validate(policy.shape())?;
    let shape = *policy.shape();
    let g = central_difference(policy.params().as_slice(), h, |theta| {
        verifier
            .correct_set()
            .iter()
            .map(|y| prob_with_params(&shape, theta, y))
            .sum()
    });
    ParamVector::new(g)
}

/// Finite-difference gradient of `J_k(theta) = 1 - (1 - J1(theta))^k`.
///
/// The function is differenced in a form that keeps full relative precision
/// near the base point: `-expm1(k ln(1 - J1))` with `J1` summed over the
/// correct set when `J1 < 1/2`, otherwise `-delta^k` with `delta` summed over
/// the incorrect set.
pub fn fd_grad_jk(policy: &Policy, verifier: &Verifier, k: usize, h: f64) -> Result<ParamVector> {
    check_k(k)?;
    verifier.validate(policy.shape())?;
    let shape = *policy.shape();
    let outcomes = policy.enumerate()?;
    let j1: f64 = outcomes
        .iter()
        .filter(|(y, _)| verifier.verify(y))
        .map(|(_, p)| p)
        .sum();
    let small_side: Vec<_> = outcomes
        .into_iter()
        .filter(|(y, _)| verifier.verify(y) == (j1 < 0.5))
        .map(|(y, _)| y)
        .collect();
    let mass = |theta: &[f64]| -> f64 {
        small_side
            .iter()
            .map(|y| prob_with_params(&shape, theta, y))
            .sum()
    };
    let g = if j1 < 0.5 {
        central_difference(policy.params().as_slice(), h, |theta| {
            -(k as f64 * (-mass(theta)).ln_1p()).exp_m1()
        })
    } else {
        central_difference(policy.params().as_slice(), h, |theta| {
            -pow_int(mass(theta), k)
        })
    };
    ParamVector::new(g)
}
