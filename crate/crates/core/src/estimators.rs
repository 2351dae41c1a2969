//! Monte Carlo gradient estimators for pass@1 and pass@k.
//!
//! All estimators are plain score-function (REINFORCE) estimators over
//! i.i.d. samples of the policy. Groups are drawn in fixed-size blocks; block
//! `b` uses random stream `b` under a seed taken from the caller's generator,
//! and block moments are merged in block order, so a call returns the same
//! bits whatever the size of the rayon pool.
//!
//! A group whose contribution is zero by construction (no correct sample for
//! the raw estimators, "not exactly one correct sample" for leave-one-out)
//! never touches its buffer, so it adds an exact `+0.0` vector.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Verifier;
use crate::error::{Error, Result};
use crate::objectives::{alpha, check_k, check_prob, pow_int};
use crate::policy::{ParamVector, Policy, Trajectory};
use crate::rng::{self, Stream};

/// Groups per random stream.
pub const BLOCK_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    /// Raw REINFORCE on single samples: `V(y) grad log pi(y)`.
    Pass1MC,
    /// Score function of the joint k-sample reward `R = 1 - prod(1 - V(y_i))`.
    PassKJoint,
    /// Joint estimator with the leave-one-out baseline `R_{-i}` per sample.
    PassKLeaveOneOut,
    /// `alpha_k(J1_hat) * pass1 estimate`, from the same samples.
    AlphaPlugin,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Pass1MC,
        EstimatorKind::PassKJoint,
        EstimatorKind::PassKLeaveOneOut,
        EstimatorKind::AlphaPlugin,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Pass1MC => "Pass1MC",
            EstimatorKind::PassKJoint => "PassKJoint",
            EstimatorKind::PassKLeaveOneOut => "PassKLeaveOneOut",
            EstimatorKind::AlphaPlugin => "AlphaPlugin",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

/// Mean and per-coordinate sample variance of the per-group contributions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradEstimate {
    pub kind: EstimatorKind,
    pub mean: ParamVector,
    pub variance: Vec<f64>,
    pub groups: usize,
    pub zero_fraction: f64,
}

impl GradEstimate {
    pub fn variance_trace(&self) -> f64 {
        self.variance.iter().sum()
    }

    /// Standard error of each coordinate of the mean.
    pub fn standard_errors(&self) -> Vec<f64> {
        self.variance
            .iter()
            .map(|v| (v / self.groups as f64).sqrt())
            .collect()
    }

    /// Largest per-coordinate deviation from `exact`, in standard errors.
    /// A coordinate with zero standard error counts as 0 if it matches
    /// exactly and as infinity otherwise.
    pub fn max_sigmas(&self, exact: &ParamVector) -> f64 {
        self.mean
            .iter()
            .zip(exact.iter())
            .zip(self.standard_errors())
            .map(|((m, e), se)| {
                let d = (m - e).abs();
                if se > 0.0 {
                    d / se
                } else if d == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn bias_norm(&self, exact: &ParamVector) -> f64 {
        self.mean
            .iter()
            .zip(exact.iter())
            .map(|(m, e)| (m - e) * (m - e))
            .sum::<f64>()
            .sqrt()
    }
}

/// Welford accumulator, mergeable with Chan's rule.
#[derive(Debug, Clone)]
struct Moments {
    count: usize,
    zero: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            count: 0,
            zero: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64], zero: bool) {
        self.count += 1;
        self.zero += usize::from(zero);
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        self.zero += other.zero;
    }

    fn into_estimate(self, kind: EstimatorKind) -> GradEstimate {
        let denom = self.count.saturating_sub(1).max(1) as f64;
        let variance = self.m2.iter().map(|s| (s / denom).max(0.0)).collect();
        GradEstimate {
            kind,
            zero_fraction: self.zero as f64 / self.count.max(1) as f64,
            groups: self.count,
            mean: ParamVector::from_vec_unchecked(self.mean),
            variance,
        }
    }
}

/// Runs `groups` independent groups in parallel blocks. `fill` receives a
/// zeroed buffer and returns `true` when it left the contribution at zero.
fn run_groups<F>(dim: usize, groups: usize, call_seed: u64, fill: F) -> Moments
where
    F: Fn(&mut Stream, &mut [f64]) -> bool + Sync,
{
    let blocks = groups.div_ceil(BLOCK_SIZE);
    let partials: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(call_seed, b as u64);
            let mut acc = Moments::new(dim);
            let mut buf = vec![0.0; dim];
            let len = BLOCK_SIZE.min(groups - b * BLOCK_SIZE);
            for _ in 0..len {
                buf.iter_mut().for_each(|v| *v = 0.0);
                let zero = fill(&mut rng, &mut buf);
                acc.push(&buf, zero);
            }
            acc
        })
        .collect();
    partials.iter().fold(Moments::new(dim), |mut acc, p| {
        acc.merge(p);
        acc
    })
}

fn fill_pass1(policy: &Policy, verifier: &Verifier, y: &Trajectory, out: &mut [f64]) -> bool {
    if verifier.verify(y) {
        policy.add_score(y, 1.0, out);
        false
    } else {
        true
    }
}

fn fill_joint(policy: &Policy, verifier: &Verifier, group: &[Trajectory], out: &mut [f64]) -> bool {
    if !group.iter().any(|y| verifier.verify(y)) {
        return true;
    }
    // R = 1
    for y in group {
        policy.add_score(y, 1.0, out);
    }
    false
}

fn fill_loo(policy: &Policy, verifier: &Verifier, group: &[Trajectory], out: &mut [f64]) -> bool {
    // R - R_{-i} is 1 exactly when y_i is the only correct sample, else 0
    let mut correct = group.iter().filter(|y| verifier.verify(y));
    match (correct.next(), correct.next()) {
        (Some(only), None) => {
            policy.add_score(only, 1.0, out);
            false
        }
        _ => true,
    }
}

fn check_group(policy: &Policy, verifier: &Verifier, group: &[Trajectory]) -> Result<()> {
    verifier.validate(policy.shape())?;
    group.iter().try_for_each(|y| policy.shape().check(y))
}

/// Single-sample pass@1 contribution `V(y) grad log pi(y)`.
pub fn pass1_contribution(
    policy: &Policy,
    verifier: &Verifier,
    y: &Trajectory,
) -> Result<ParamVector> {
    check_group(policy, verifier, std::slice::from_ref(y))?;
    let mut out = vec![0.0; policy.params().len()];
    fill_pass1(policy, verifier, y, &mut out);
    Ok(ParamVector::from_vec_unchecked(out))
}

/// Joint group contribution `R * sum_i grad log pi(y_i)`.
pub fn joint_contribution(
    policy: &Policy,
    verifier: &Verifier,
    group: &[Trajectory],
) -> Result<ParamVector> {
    check_group(policy, verifier, group)?;
    let mut out = vec![0.0; policy.params().len()];
    fill_joint(policy, verifier, group, &mut out);
    Ok(ParamVector::from_vec_unchecked(out))
}

/// Leave-one-out group contribution `sum_i (R - R_{-i}) grad log pi(y_i)`.
pub fn loo_contribution(
    policy: &Policy,
    verifier: &Verifier,
    group: &[Trajectory],
) -> Result<ParamVector> {
    if group.len() < 2 {
        return Err(Error::OutOfRange("leave-one-out needs k >= 2".into()));
    }
    check_group(policy, verifier, group)?;
    let mut out = vec![0.0; policy.params().len()];
    fill_loo(policy, verifier, group, &mut out);
    Ok(ParamVector::from_vec_unchecked(out))
}

fn nonzero(name: &str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::OutOfRange(format!("{name} must be at least 1")));
    }
    Ok(())
}

/// Unbiased REINFORCE estimate of `grad J1` from `n` samples.
pub fn estimate_pass1<R: RngCore + ?Sized>(
    policy: &Policy,
    verifier: &Verifier,
    n: usize,
    rng: &mut R,
) -> Result<GradEstimate> {
    nonzero("n", n)?;
    verifier.validate(policy.shape())?;
    let seed = rng.next_u64();
    let m = run_groups(policy.params().len(), n, seed, |r, buf| {
        let y = policy.sample_one(r);
        fill_pass1(policy, verifier, &y, buf)
    });
    Ok(m.into_estimate(EstimatorKind::Pass1MC))
}

fn estimate_grouped<R, F>(
    kind: EstimatorKind,
    policy: &Policy,
    verifier: &Verifier,
    k: usize,
    groups: usize,
    rng: &mut R,
    fill: F,
) -> Result<GradEstimate>
where
    R: RngCore + ?Sized,
    F: Fn(&Policy, &Verifier, &[Trajectory], &mut [f64]) -> bool + Sync,
{
    check_k(k)?;
    nonzero("groups", groups)?;
    verifier.validate(policy.shape())?;
    let seed = rng.next_u64();
    let m = run_groups(policy.params().len(), groups, seed, |r, buf| {
        let group = policy.sample(r, k);
        fill(policy, verifier, &group, buf)
    });
    Ok(m.into_estimate(kind))
}

/// Unbiased estimate of `grad J_k` from the joint reward of `k` samples per group.
pub fn estimate_passk_joint<R: RngCore + ?Sized>(
    policy: &Policy,
    verifier: &Verifier,
    k: usize,
    groups: usize,
    rng: &mut R,
) -> Result<GradEstimate> {
    estimate_grouped(
        EstimatorKind::PassKJoint,
        policy,
        verifier,
        k,
        groups,
        rng,
        fill_joint,
    )
}

/// Unbiased, lower-variance estimate of `grad J_k` with leave-one-out baselines.
pub fn estimate_passk_loo<R: RngCore + ?Sized>(
    policy: &Policy,
    verifier: &Verifier,
    k: usize,
    groups: usize,
    rng: &mut R,
) -> Result<GradEstimate> {
    if k < 2 {
        return Err(Error::OutOfRange("leave-one-out needs k >= 2".into()));
    }
    estimate_grouped(
        EstimatorKind::PassKLeaveOneOut,
        policy,
        verifier,
        k,
        groups,
        rng,
        fill_loo,
    )
}

/// `alpha_k(J1_hat) * g1_hat` with `J1_hat` and `g1_hat` from the same `n`
/// samples. Consistent, but biased for finite `n`. The reported variance is
/// the pass@1 variance scaled by `alpha^2`.
pub fn estimate_alpha_plugin<R: RngCore + ?Sized>(
    policy: &Policy,
    verifier: &Verifier,
    k: usize,
    n: usize,
    rng: &mut R,
) -> Result<GradEstimate> {
    check_k(k)?;
    let pass1 = estimate_pass1(policy, verifier, n, rng)?;
    let j1_hat = 1.0 - pass1.zero_fraction;
    let a = alpha(j1_hat.clamp(0.0, 1.0), k)?;
    Ok(GradEstimate {
        kind: EstimatorKind::AlphaPlugin,
        mean: pass1.mean.scaled(a),
        variance: pass1.variance.iter().map(|v| a * a * v).collect(),
        groups: pass1.groups,
        zero_fraction: pass1.zero_fraction,
    })
}

/// Dispatch by kind. `groups` is the number of groups for the k-sample
/// estimators; the single-sample ones draw `groups` (Pass1MC) or
/// `groups * k` (AlphaPlugin, matching the joint estimators' sample budget).
pub fn estimate<R: RngCore + ?Sized>(
    kind: EstimatorKind,
    policy: &Policy,
    verifier: &Verifier,
    k: usize,
    groups: usize,
    rng: &mut R,
) -> Result<GradEstimate> {
    match kind {
        EstimatorKind::Pass1MC => estimate_pass1(policy, verifier, groups, rng),
        EstimatorKind::PassKJoint => estimate_passk_joint(policy, verifier, k, groups, rng),
        EstimatorKind::PassKLeaveOneOut => estimate_passk_loo(policy, verifier, k, groups, rng),
        EstimatorKind::AlphaPlugin => {
            let n = groups
                .checked_mul(k)
                .ok_or_else(|| Error::OutOfRange("groups * k overflows".into()))?;
            estimate_alpha_plugin(policy, verifier, k, n, rng)
        }
    }
}

/// Probability that `m` samples all fail, i.e. that the batch gradient is exactly zero.
pub fn zero_signal_prob(j1: f64, m: usize) -> Result<f64> {
    check_prob("j1", j1)?;
    nonzero("m", m)?;
    Ok(pow_int(1.0 - j1, m))
}

/// Unbiased pass@k from `c` correct out of `n` samples: `1 - C(n-c, k) / C(n, k)`,
/// evaluated as `1 - prod_{i<k} (n-c-i)/(n-i)`.
pub fn passk_eval(n: usize, c: usize, k: usize) -> Result<f64> {
    if c > n {
        return Err(Error::OutOfRange(format!("c = {c} exceeds n = {n}")));
    }
    if k == 0 || k > n {
        return Err(Error::OutOfRange(format!(
            "k = {k} must lie in [1, n = {n}]"
        )));
    }
    let mut miss = 1.0;
    for i in 0..k {
        let num = n - c;
        if num <= i {
            return Ok(1.0);
        }
        miss *= (num - i) as f64 / (n - i) as f64;
    }
    Ok(1.0 - miss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::make_bandit;
    use crate::rng::stream;

    #[test]
    fn rejecting_verifier_gives_exact_zero() {
        let env = make_bandit(5, &[], None).unwrap();
        let est = estimate_pass1(&env.policy, &env.verifier, 1000, &mut stream(1, 0)).unwrap();
        assert!(est.mean.iter().all(|v| v.to_bits() == 0));
        assert_eq!(est.zero_fraction, 1.0);
        assert_eq!(est.variance_trace(), 0.0);
    }

    #[test]
    fn single_correct_sample_is_its_score() {
        let env = make_bandit(3, &[0, 1, 2], None).unwrap();
        let est = estimate_pass1(&env.policy, &env.verifier, 1, &mut stream(2, 0)).unwrap();
        // everything is correct, so the one sample's score is the estimate
        let mut r = stream(2, 0);
        let seed = r.next_u64();
        let y = env.policy.sample_one(&mut stream(seed, 0));
        assert_eq!(est.mean, env.policy.log_prob_grad(&y).unwrap());
        assert_eq!(est.groups, 1);
    }

    #[test]
    fn all_fail_group_is_bitwise_zero() {
        let env = make_bandit(4, &[0], None).unwrap();
        let fail = vec![
            Trajectory::answer(1),
            Trajectory::answer(2),
            Trajectory::answer(3),
        ];
        let c = joint_contribution(&env.policy, &env.verifier, &fail).unwrap();
        assert!(c.iter().all(|v| v.to_bits() == 0));
        let c = loo_contribution(&env.policy, &env.verifier, &fail).unwrap();
        assert!(c.iter().all(|v| v.to_bits() == 0));
        let c = pass1_contribution(&env.policy, &env.verifier, &fail[0]).unwrap();
        assert!(c.iter().all(|v| v.to_bits() == 0));
    }

    #[test]
    fn loo_group_rules() {
        let env = make_bandit(4, &[0, 1], None).unwrap();
        let two = vec![
            Trajectory::answer(0),
            Trajectory::answer(1),
            Trajectory::answer(2),
        ];
        assert!(loo_contribution(&env.policy, &env.verifier, &two)
            .unwrap()
            .is_zero());
        let one = vec![
            Trajectory::answer(3),
            Trajectory::answer(0),
            Trajectory::answer(2),
        ];
        assert_eq!(
            loo_contribution(&env.policy, &env.verifier, &one).unwrap(),
            env.policy.log_prob_grad(&Trajectory::answer(0)).unwrap()
        );
        assert!(loo_contribution(&env.policy, &env.verifier, &one[..1]).is_err());
        assert!(estimate_passk_loo(&env.policy, &env.verifier, 1, 10, &mut stream(0, 0)).is_err());
    }

    #[test]
    fn joint_group_sums_all_scores() {
        let env = make_bandit(3, &[0], None).unwrap();
        let g = vec![Trajectory::answer(0), Trajectory::answer(2)];
        let c = joint_contribution(&env.policy, &env.verifier, &g).unwrap();
        let a = env.policy.log_prob_grad(&g[0]).unwrap();
        let b = env.policy.log_prob_grad(&g[1]).unwrap();
        for i in 0..3 {
            assert!((c[i] - (a[i] + b[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn alpha_plugin_cannot_rescue_zero_signal() {
        let none = make_bandit(4, &[], None).unwrap();
        let est =
            estimate_alpha_plugin(&none.policy, &none.verifier, 8, 100, &mut stream(3, 0)).unwrap();
        assert!(est.mean.is_zero());
        let all = make_bandit(4, &[0, 1, 2, 3], None).unwrap();
        let est =
            estimate_alpha_plugin(&all.policy, &all.verifier, 2, 100, &mut stream(3, 0)).unwrap();
        assert!(est.mean.is_zero());
    }

    #[test]
    fn zero_signal_examples() {
        for m in [1, 5, 64] {
            assert_eq!(zero_signal_prob(0.0, m).unwrap(), 1.0);
        }
        assert!((zero_signal_prob(0.01, 8).unwrap() - 0.99f64.powi(8)).abs() < 1e-15);
        assert!((zero_signal_prob(0.01, 8).unwrap() - 0.92274).abs() < 1e-5);
        assert!(zero_signal_prob(0.5, 0).is_err());
    }

    #[test]
    fn passk_eval_examples() {
        assert_eq!(passk_eval(10, 10, 3).unwrap(), 1.0);
        assert_eq!(passk_eval(10, 0, 3).unwrap(), 0.0);
        assert!((passk_eval(4, 2, 2).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!(passk_eval(4, 5, 2).is_err());
        assert!(passk_eval(4, 2, 5).is_err());
        assert!(passk_eval(4, 2, 0).is_err());
        let big = passk_eval(1_000_000, 10, 1000).unwrap();
        assert!(big.is_finite() && big > 0.0 && big < 1.0);
    }

    #[test]
    fn estimates_do_not_depend_on_pool_size() {
        let env = make_bandit(10, &[3], None).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    estimate_passk_joint(&env.policy, &env.verifier, 4, 20_000, &mut stream(9, 0))
                        .unwrap()
                })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.variance, b.variance);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("nope".parse::<EstimatorKind>().is_err());
    }
}
