//! Exact pass@1 / pass@k objectives, the reweighting factor `alpha_k`, and
//! the pass@k − pass@1 gap.
//!
//! For a fixed prompt, `J_k = 1 - (1 - J_1)^k`, so
//! `grad J_k = alpha_k * grad J_1` with `alpha_k = k (1 - J_1)^(k-1)`.
//! [`grad_jk_exact`] computes the gradient through that identity; the
//! finite-difference checks in [`crate::gradcheck`] validate it without it.

use serde::Serialize;

use crate::env::Verifier;
use crate::error::{Error, Result};
use crate::policy::{ParamVector, Policy};

/// Largest supported number of attempts.
pub const MAX_K: usize = 1 << 16;

/// `x^n` by binary exponentiation. Deterministic across platforms, unlike `powi`.
pub fn pow_int(x: f64, mut n: usize) -> f64 {
    let mut base = x;
    let mut acc = 1.0;
    while n > 0 {
        if n & 1 == 1 {
            acc *= base;
        }
        base *= base;
        n >>= 1;
    }
    acc
}

pub(crate) fn check_k(k: usize) -> Result<()> {
    if k == 0 || k > MAX_K {
        return Err(Error::OutOfRange(format!(
            "k must lie in [1, {MAX_K}], got {k}"
        )));
    }
    Ok(())
}

pub(crate) fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange(format!(
            "{name} must lie in [0, 1], got {p}"
        )));
    }
    Ok(())
}

/// `J1 = sum_y prob(y) V(y)`, by full enumeration.
pub fn j1_exact(policy: &Policy, verifier: &Verifier) -> Result<f64> {
    verifier.validate(policy.shape())?;
    Ok(policy
        .enumerate()?
        .iter()
        .filter(|(y, _)| verifier.verify(y))
        .map(|(_, p)| p)
        .sum())
}

/// `1 - (1 - j1)^k`.
pub fn jk_from_j1(j1: f64, k: usize) -> Result<f64> {
    check_prob("j1", j1)?;
    check_k(k)?;
    Ok(1.0 - pow_int(1.0 - j1, k))
}

/// `alpha_k = k (1 - j1)^(k-1)`, always in `[0, k]`.
pub fn alpha(j1: f64, k: usize) -> Result<f64> {
    check_prob("j1", j1)?;
    check_k(k)?;
    Ok(k as f64 * pow_int(1.0 - j1, k - 1))
}

/// `delta - delta^k` with `delta = 1 - p`; equal to `J_k - J_1` at `J_1 = p`.
pub fn gap(p: f64, k: usize) -> Result<f64> {
    check_prob("p", p)?;
    check_k(k)?;
    let delta = 1.0 - p;
    Ok(delta - pow_int(delta, k))
}

/// `grad J1 = sum_y V(y) prob(y) grad log prob(y)`.
pub fn grad_j1_exact(policy: &Policy, verifier: &Verifier) -> Result<ParamVector> {
    policy.mass_grad(verifier.correct_set())
}

/// Failure mass `delta = 1 - J1`. Above `J1 = 1/2` the incorrect mass is
/// summed directly instead of subtracting.
pub fn delta_exact(policy: &Policy, verifier: &Verifier) -> Result<f64> {
    verifier.validate(policy.shape())?;
    let (mut hit, mut miss) = (0.0, 0.0);
    for (y, p) in policy.enumerate()? {
        if verifier.verify(&y) {
            hit += p;
        } else {
            miss += p;
        }
    }
    Ok(if hit > 0.5 { miss } else { 1.0 - hit })
}

/// `grad J_k = alpha_k(J1) * grad J1`.
pub fn grad_jk_exact(policy: &Policy, verifier: &Verifier, k: usize) -> Result<ParamVector> {
    check_k(k)?;
    let delta = delta_exact(policy, verifier)?;
    let scale = k as f64 * pow_int(delta, k - 1);
    Ok(grad_j1_exact(policy, verifier)?.scaled(scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveReport {
    pub j1: f64,
    pub jk: f64,
    pub alpha: f64,
    pub gap: f64,
    pub k: usize,
}

impl ObjectiveReport {
    pub fn from_j1(j1: f64, k: usize) -> Result<Self> {
        Ok(Self {
            j1,
            jk: jk_from_j1(j1, k)?,
            alpha: alpha(j1, k)?,
            gap: gap(j1, k)?,
            k,
        })
    }

    pub fn evaluate(policy: &Policy, verifier: &Verifier, k: usize) -> Result<Self> {
        Self::from_j1(j1_exact(policy, verifier)?, k)
    }
}
