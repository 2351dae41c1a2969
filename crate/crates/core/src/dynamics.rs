//! Training loops on a fixed prompt: sampled RLVR updates, the idealized
//! mass-ascent update on the discovered mode, discovery tracking, and the
//! pass@k − pass@1 gap along the run.
//!
//! Every [`StepRecord`] carries exact metrics of the policy *before* that
//! step's update, recomputed from the policy itself rather than estimated.
//! A run of `steps` updates produces `steps + 1` records; the last one
//! describes the final policy and has no batch attached.

use rayon::prelude::*;
use serde::Serialize;

use crate::env::{ModePartition, ReinforceTarget, Scenario, Verifier};
use crate::error::{Error, Result};
use crate::objectives::{check_k, gap, jk_from_j1};
use crate::policy::{ParamVector, Policy, PolicyShape, TrajectorySet};
use crate::rng::{self, Stream};

/// Default threshold for "the gap has collapsed".
pub const GAP_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Draw `k` samples and reinforce them (verifier-gated by default).
    SampledReinforce,
    /// `theta += eta * grad p / p` with `p = pi(M1)`, computed exactly.
    IdealizedMassAscent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub p_m1: f64,
    pub p_m2: f64,
    pub j1: f64,
    pub jk: f64,
    pub gap: f64,
    pub discovered_m2: bool,
    pub grad_norm: f64,
    pub batch_correct: usize,
}

impl StepRecord {
    /// Exact metrics of `policy`; batch fields are left empty. Without a
    /// partition the whole correct set plays the role of `M1`.
    pub fn measure(
        policy: &Policy,
        verifier: &Verifier,
        partition: Option<&ModePartition>,
        k: usize,
        t: usize,
    ) -> Result<Self> {
        let j1 = policy.mass(verifier.correct_set())?.clamp(0.0, 1.0);
        let (p_m1, p_m2) = match partition {
            Some(p) => (policy.mass(p.m1())?, policy.mass(p.m2())?),
            None => (j1, 0.0),
        };
        Ok(Self {
            t,
            p_m1,
            p_m2,
            j1,
            jk: jk_from_j1(j1, k)?,
            gap: gap(j1, k)?,
            discovered_m2: false,
            grad_norm: 0.0,
            batch_correct: 0,
        })
    }
}

/// One sampled update. The record describes the input policy and the batch
/// drawn from it; `t` is left at 0 for the caller to fill.
#[allow(clippy::too_many_arguments)]
pub fn step_sampled<R: rand::Rng + ?Sized>(
    policy: &Policy,
    verifier: &Verifier,
    partition: Option<&ModePartition>,
    k: usize,
    eta: f64,
    reinforce: ReinforceTarget,
    rng: &mut R,
) -> Result<(Policy, StepRecord)> {
    check_k(k)?;
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::OutOfRange(format!(
            "eta must be positive, got {eta}"
        )));
    }
    let mut record = StepRecord::measure(policy, verifier, partition, k, 0)?;
    let batch = policy.sample(rng, k);
    let mut direction = vec![0.0; policy.params().len()];
    let mut touched = false;
    for y in &batch {
        let correct = verifier.verify(y);
        record.batch_correct += usize::from(correct);
        if let Some(p) = partition {
            record.discovered_m2 |= p.m2().contains(y);
        }
        if correct || reinforce == ReinforceTarget::AllSamples {
            policy.add_score(y, 1.0, &mut direction);
            touched = true;
        }
    }
    if !touched {
        return Ok((policy.clone(), record));
    }
    let direction = ParamVector::new(direction)?;
    record.grad_norm = direction.norm();
    Ok((policy.apply_update(&direction, eta)?, record))
}

/// `(theta + eta * grad p / p, grad p / p, p)` for `p = mass(m1)`.
fn mass_ascent(
    policy: &Policy,
    m1: &TrajectorySet,
    eta: f64,
) -> Result<(Policy, ParamVector, f64)> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::OutOfRange(format!(
            "eta must be positive, got {eta}"
        )));
    }
    let p = policy.mass(m1)?;
    if p <= 0.0 {
        return Err(Error::DegenerateMode("pi(M1) is zero".into()));
    }
    let direction = policy.mass_grad(m1)?.scaled(1.0 / p);
    let next = if direction.is_zero() {
        policy.clone()
    } else {
        policy.apply_update(&direction, eta)?
    };
    Ok((next, direction, p))
}

/// One idealized update `theta += eta * grad log pi(M1)`.
pub fn step_idealized_mass(
    policy: &Policy,
    verifier: &Verifier,
    partition: &ModePartition,
    k: usize,
    eta: f64,
) -> Result<(Policy, StepRecord)> {
    let mut record = StepRecord::measure(policy, verifier, Some(partition), k, 0)?;
    let (next, direction, _) = mass_ascent(policy, partition.m1(), eta)?;
    record.grad_norm = direction.norm();
    Ok((next, record))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioDescriptor {
    pub shape: PolicyShape,
    pub correct: usize,
    pub m1: Option<usize>,
    pub m2: Option<usize>,
    pub k: usize,
    pub eta: f64,
    pub steps: usize,
    pub seed: u64,
    pub replicate: usize,
    pub rule: UpdateRule,
    pub reinforce: ReinforceTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub final_p_m1: f64,
    pub total_discoveries: usize,
    /// First `t` from which the gap stays below `gap_threshold` to the end.
    pub steps_to_gap_below: Option<usize>,
    pub gap_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunHistory {
    pub scenario: ScenarioDescriptor,
    pub records: Vec<StepRecord>,
    pub summary: RunSummary,
}

impl RunHistory {
    pub fn initial(&self) -> &StepRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &StepRecord {
        self.records
            .last()
            .expect("history always has the initial record")
    }

    pub fn discovered(&self) -> bool {
        self.summary.total_discoveries > 0
    }
}

/// Replicate 0 of `scenario`.
pub fn run(scenario: &Scenario, rule: UpdateRule) -> Result<RunHistory> {
    run_replicate(scenario, rule, 0)
}

/// Runs replicate `replicate` on random stream `(scenario.seed, replicate)`.
pub fn run_replicate(
    scenario: &Scenario,
    rule: UpdateRule,
    replicate: usize,
) -> Result<RunHistory> {
    let env = &scenario.env;
    let partition = env.partition.as_ref();
    if rule == UpdateRule::IdealizedMassAscent && partition.is_none() {
        return Err(Error::MissingPartition);
    }
    let mut rng: Stream = rng::stream(scenario.seed, replicate as u64);
    let mut policy = env.policy.clone();
    let mut records = Vec::with_capacity(scenario.steps + 1);
    for t in 0..scenario.steps {
        let (next, mut record) = match rule {
            UpdateRule::SampledReinforce => step_sampled(
                &policy,
                &env.verifier,
                partition,
                scenario.k,
                scenario.eta,
                scenario.reinforce,
                &mut rng,
            )?,
            UpdateRule::IdealizedMassAscent => step_idealized_mass(
                &policy,
                &env.verifier,
                partition.expect("checked above"),
                scenario.k,
                scenario.eta,
            )?,
        };
        record.t = t;
        records.push(record);
        policy = next;
    }
    records.push(StepRecord::measure(
        &policy,
        &env.verifier,
        partition,
        scenario.k,
        scenario.steps,
    )?);

    let settled = records.iter().rposition(|r| r.gap >= GAP_THRESHOLD);
    let steps_to_gap_below = match settled {
        None => Some(0),
        Some(i) if i + 1 < records.len() => Some(records[i + 1].t),
        Some(_) => None,
    };
    let summary = RunSummary {
        final_p_m1: records.last().map(|r| r.p_m1).unwrap_or_default(),
        total_discoveries: records.iter().filter(|r| r.discovered_m2).count(),
        steps_to_gap_below,
        gap_threshold: GAP_THRESHOLD,
    };
    let scenario = ScenarioDescriptor {
        shape: *env.policy.shape(),
        correct: env.verifier.correct_set().len(),
        m1: partition.map(|p| p.m1().len()),
        m2: partition.map(|p| p.m2().len()),
        k: scenario.k,
        eta: scenario.eta,
        steps: scenario.steps,
        seed: scenario.seed,
        replicate,
        rule,
        reinforce: scenario.reinforce,
    };
    Ok(RunHistory {
        scenario,
        records,
        summary,
    })
}

/// All `scenario.replicates` runs, in replicate order.
pub fn run_replicates(scenario: &Scenario, rule: UpdateRule) -> Result<Vec<RunHistory>> {
    (0..scenario.replicates)
        .into_par_iter()
        .map(|r| run_replicate(scenario, rule, r))
        .collect()
}

/// `1 - (1 - epsilon)^k`, summed as `epsilon * sum_{j<k} (1 - epsilon)^j`
/// so that small `epsilon` loses no precision and `k = 1` gives `epsilon` exactly.
pub fn hit_probability(epsilon: f64, k: usize) -> f64 {
    let miss = 1.0 - epsilon;
    let mut term = 1.0;
    let mut sum = 0.0;
    for _ in 0..k {
        sum += term;
        term *= miss;
    }
    epsilon * sum
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiscoverySummary {
    pub epsilon: f64,
    pub k: usize,
    pub trials: usize,
    pub discoveries: usize,
    pub empirical_rate: f64,
    /// `1 - (1 - epsilon)^k`.
    pub exact_rate: f64,
    /// `k * epsilon`.
    pub bound_keps: f64,
    /// Binomial standard deviation of `empirical_rate` around `exact_rate`.
    pub sigma: f64,
}

/// Frequency with which the first batch of `k` samples from the starting
/// policy hits `M2`, over `trials` independent batches.
pub fn discovery_experiment(scenario: &Scenario, trials: usize) -> Result<DiscoverySummary> {
    let partition = scenario
        .env
        .partition
        .as_ref()
        .ok_or(Error::MissingPartition)?;
    if trials == 0 {
        return Err(Error::OutOfRange("trials must be at least 1".into()));
    }
    let k = scenario.k;
    check_k(k)?;
    let policy = &scenario.env.policy;
    let m2 = partition.m2();
    let epsilon = policy.mass(m2)?;

    const BLOCK: usize = 4096;
    let blocks = trials.div_ceil(BLOCK);
    let discoveries: usize = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(scenario.seed, b as u64);
            let len = BLOCK.min(trials - b * BLOCK);
            (0..len)
                .filter(|_| {
                    // draw the full batch so the stream position does not depend on outcomes
                    let batch = policy.sample(&mut rng, k);
                    batch.iter().any(|y| m2.contains(y))
                })
                .count()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();

    let exact_rate = hit_probability(epsilon, k);
    Ok(DiscoverySummary {
        epsilon,
        k,
        trials,
        discoveries,
        empirical_rate: discoveries as f64 / trials as f64,
        exact_rate,
        bound_keps: k as f64 * epsilon,
        sigma: (exact_rate * (1.0 - exact_rate) / trials as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaylorReport {
    pub eta: f64,
    pub p_before: f64,
    pub p_after: f64,
    /// First-order prediction `(eta / p) * |grad p|^2`.
    pub predicted_delta: f64,
    pub actual_delta: f64,
    /// `actual_delta - predicted_delta`.
    pub discrepancy: f64,
}

/// Compares one exact mass-ascent step with its first-order Taylor prediction.
pub fn taylor_check(policy: &Policy, partition: &ModePartition, eta: f64) -> Result<TaylorReport> {
    let (next, direction, p) = mass_ascent(policy, partition.m1(), eta)?;
    // direction = grad p / p, so |grad p|^2 / p = p * |direction|^2
    let predicted_delta = eta * p * direction.dot(&direction);
    let p_after = next.mass(partition.m1())?;
    let actual_delta = p_after - p;
    Ok(TaylorReport {
        eta,
        p_before: p,
        p_after,
        predicted_delta,
        actual_delta,
        discrepancy: actual_delta - predicted_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::make_bandit;
    use crate::policy::Trajectory;

    fn two_mode() -> Scenario {
        let env = make_bandit(10, &[0, 1], Some((&[0], &[1]))).unwrap();
        Scenario::new(env, 4, 0.05, 50, 3).unwrap()
    }

    #[test]
    fn zero_steps_gives_initial_record_only() {
        let mut s = two_mode();
        s.steps = 0;
        let h = run(&s, UpdateRule::SampledReinforce).unwrap();
        assert_eq!(h.records.len(), 1);
        assert_eq!(h.records[0].t, 0);
    }

    #[test]
    fn no_correct_answers_means_no_learning() {
        let env = make_bandit(6, &[], None).unwrap();
        let s = Scenario::new(env.clone(), 4, 0.5, 30, 1).unwrap();
        let h = run(&s, UpdateRule::SampledReinforce).unwrap();
        assert!(h.records.iter().all(|r| r.j1 == 0.0 && r.grad_norm == 0.0));
        let mut rng = rng::stream(0, 0);
        let (next, rec) = step_sampled(
            &env.policy,
            &env.verifier,
            None,
            4,
            0.5,
            ReinforceTarget::Verified,
            &mut rng,
        )
        .unwrap();
        assert_eq!(next.params(), env.policy.params());
        assert_eq!(rec.batch_correct, 0);
    }

    #[test]
    fn records_are_contiguous() {
        let h = run(&two_mode(), UpdateRule::SampledReinforce).unwrap();
        assert_eq!(h.records.len(), 51);
        assert!(h.records.iter().enumerate().all(|(i, r)| r.t == i));
    }

    #[test]
    fn idealized_requires_partition() {
        let env = make_bandit(4, &[0], None).unwrap();
        let s = Scenario::new(env, 2, 0.01, 3, 0).unwrap();
        assert!(matches!(
            run(&s, UpdateRule::IdealizedMassAscent),
            Err(Error::MissingPartition)
        ));
        assert!(matches!(
            discovery_experiment(&s, 10),
            Err(Error::MissingPartition)
        ));
    }

    #[test]
    fn idealized_degenerate_mode() {
        let env = make_bandit(4, &[0], Some((&[], &[0]))).unwrap();
        let p = env.partition.as_ref().unwrap();
        assert!(matches!(
            step_idealized_mass(&env.policy, &env.verifier, p, 2, 0.01),
            Err(Error::DegenerateMode(_))
        ));
    }

    #[test]
    fn idealized_full_space_is_stationary() {
        let env = make_bandit(3, &[0, 1, 2], Some((&[0, 1, 2], &[]))).unwrap();
        let p = env.partition.as_ref().unwrap();
        let env = env
            .with_policy(Policy::categorical(vec![0.1, 0.2, -0.3]).unwrap())
            .unwrap();
        let (next, _) = step_idealized_mass(&env.policy, &env.verifier, p, 2, 0.1).unwrap();
        // grad of the constant 1 is zero up to rounding
        assert!(next
            .params()
            .iter()
            .zip(env.policy.params().iter())
            .all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn idealized_first_order_step() {
        let env = make_bandit(3, &[0], Some((&[0], &[]))).unwrap();
        let p = env.partition.as_ref().unwrap();
        let r = taylor_check(&env.policy, p, 0.01).unwrap();
        assert!((r.predicted_delta - 0.03 * 6.0 / 81.0).abs() < 1e-15);
        assert!((r.actual_delta - r.predicted_delta).abs() < 1e-4);
        assert!(r.actual_delta > 0.0);
    }

    #[test]
    fn single_correct_sample_reinforced() {
        let env = make_bandit(5, &[2], Some((&[2], &[]))).unwrap();
        let y = Trajectory::answer(2);
        let d = env.policy.log_prob_grad(&y).unwrap();
        for eta in [1e-6, 0.1, 10.0, 1e3] {
            let next = env.policy.apply_update(&d, eta).unwrap();
            assert!(next.prob(&y).unwrap() >= env.policy.prob(&y).unwrap());
        }
    }

    #[test]
    fn hit_probability_matches_power_form() {
        assert!((hit_probability(0.01, 8) - (1.0 - 0.99f64.powi(8))).abs() < 1e-16);
        assert!((hit_probability(0.01, 8) - 0.07726).abs() < 1e-5);
        assert_eq!(hit_probability(0.5, 4), 0.9375);
        assert_eq!(hit_probability(0.3, 1), 0.3);
        assert_eq!(hit_probability(0.0, 9), 0.0);
    }

    #[test]
    fn discovery_zero_and_k1() {
        let env = make_bandit(10, &[0], Some((&[0], &[]))).unwrap();
        let s = Scenario::new(env, 5, 0.1, 0, 2).unwrap();
        let d = discovery_experiment(&s, 1000).unwrap();
        assert_eq!(d.discoveries, 0);
        assert_eq!(d.exact_rate, 0.0);

        let env = make_bandit(10, &[0, 1], Some((&[0], &[1]))).unwrap();
        let s = Scenario::new(env, 1, 0.1, 0, 2).unwrap();
        let d = discovery_experiment(&s, 1000).unwrap();
        assert_eq!(d.exact_rate, d.epsilon);
    }

    #[test]
    fn all_samples_flag_reinforces_failures() {
        let env = make_bandit(4, &[], None).unwrap();
        let mut rng = rng::stream(4, 0);
        let (next, rec) = step_sampled(
            &env.policy,
            &env.verifier,
            None,
            3,
            0.1,
            ReinforceTarget::AllSamples,
            &mut rng,
        )
        .unwrap();
        assert_ne!(next.params(), env.policy.params());
        assert!(rec.grad_norm > 0.0);
    }

    #[test]
    fn replicates_are_reproducible() {
        let s = two_mode().with_replicates(3).unwrap();
        let a = run_replicates(&s, UpdateRule::SampledReinforce).unwrap();
        let b = run_replicates(&s, UpdateRule::SampledReinforce).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].records, a[1].records);
    }
}
