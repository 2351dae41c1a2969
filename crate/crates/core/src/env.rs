//! Verifiable-reward environments.
//!
//! Verifiers are extensional: `V(y) = 1` iff `y` belongs to an explicit
//! correct set. A [`ModePartition`] splits that set into a discovered mode
//! `M1` and an undiscovered mode `M2`; its disjointness and coverage are
//! checked once, at construction, and the type offers no way to mutate it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::policy::{ParamVector, Policy, PolicyShape, Trajectory, TrajectorySet};

#[derive(Debug, Clone, PartialEq)]
pub struct Verifier {
    correct: TrajectorySet,
}

impl Verifier {
    pub fn new(correct: TrajectorySet) -> Self {
        Self { correct }
    }

    pub fn correct_set(&self) -> &TrajectorySet {
        &self.correct
    }

    /// `V(y)`.
    pub fn verify(&self, y: &Trajectory) -> bool {
        self.correct.contains(y)
    }

    pub fn validate(&self, shape: &PolicyShape) -> Result<()> {
        self.correct.validate(shape)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModePartition {
    m1: TrajectorySet,
    m2: TrajectorySet,
}

impl ModePartition {
    /// Requires `m1 ∩ m2 = ∅` and `m1 ∪ m2 = correct set`.
    pub fn new(m1: TrajectorySet, m2: TrajectorySet, verifier: &Verifier) -> Result<Self> {
        if !m1.is_disjoint(&m2) {
            return Err(Error::Partition("modes overlap".into()));
        }
        if &m1.union(&m2) != verifier.correct_set() {
            return Err(Error::Partition(
                "modes do not cover exactly the correct set".into(),
            ));
        }
        Ok(Self { m1, m2 })
    }

    pub fn m1(&self) -> &TrajectorySet {
        &self.m1
    }

    pub fn m2(&self) -> &TrajectorySet {
        &self.m2
    }
}

/// A policy together with the verifier (and optional modes) it is judged by.
#[derive(Debug, Clone)]
pub struct Environment {
    pub policy: Policy,
    pub verifier: Verifier,
    pub partition: Option<ModePartition>,
}

impl Environment {
    pub fn new(
        policy: Policy,
        verifier: Verifier,
        partition: Option<ModePartition>,
    ) -> Result<Self> {
        verifier.validate(policy.shape())?;
        Ok(Self {
            policy,
            verifier,
            partition,
        })
    }

    /// Same environment with a different starting policy of the same shape.
    pub fn with_policy(&self, policy: Policy) -> Result<Self> {
        if policy.shape() != self.policy.shape() {
            return Err(Error::ShapeMismatch(
                "replacement policy has a different shape".into(),
            ));
        }
        Ok(Self {
            policy,
            ..self.clone()
        })
    }

    /// Engineers the start so that `pi_0(M2) = epsilon` (see [`engineer_set_mass`]).
    pub fn with_m2_mass(&self, epsilon: f64) -> Result<Self> {
        let partition = self.partition.as_ref().ok_or(Error::MissingPartition)?;
        let policy = engineer_set_mass(&self.policy, partition.m2(), epsilon)?;
        self.with_policy(policy)
    }

    /// Engineers the start so that `J1 = pi_0(correct set) = j1`.
    pub fn with_correct_mass(&self, j1: f64) -> Result<Self> {
        let policy = engineer_set_mass(&self.policy, self.verifier.correct_set(), j1)?;
        self.with_policy(policy)
    }
}

fn partition_from(
    verifier: &Verifier,
    modes: Option<(TrajectorySet, TrajectorySet)>,
) -> Result<Option<ModePartition>> {
    modes
        .map(|(m1, m2)| ModePartition::new(m1, m2, verifier))
        .transpose()
}

/// Uniform categorical policy over `n_answers` with verifier `correct`.
pub fn make_bandit(
    n_answers: usize,
    correct: &[usize],
    modes: Option<(&[usize], &[usize])>,
) -> Result<Environment> {
    if n_answers == 0 {
        return Err(Error::ShapeMismatch(
            "bandit needs at least one answer".into(),
        ));
    }
    let policy = Policy::uniform(PolicyShape::Categorical { answers: n_answers })?;
    let verifier = Verifier::new(TrajectorySet::from_answers(correct.iter().copied()));
    verifier.validate(policy.shape())?;
    let modes = modes.map(|(a, b)| {
        (
            TrajectorySet::from_answers(a.iter().copied()),
            TrajectorySet::from_answers(b.iter().copied()),
        )
    });
    let partition = partition_from(&verifier, modes)?;
    Environment::new(policy, verifier, partition)
}

/// Uniform autoregressive policy with verifier "exact match with one of `targets`".
#[allow(clippy::type_complexity)]
pub fn make_sequence_env(
    vocab: usize,
    horizon: usize,
    targets: &[Vec<usize>],
    modes: Option<(&[Vec<usize>], &[Vec<usize>])>,
) -> Result<Environment> {
    let policy = Policy::uniform(PolicyShape::Autoregressive { vocab, horizon })?;
    let to_set =
        |ys: &[Vec<usize>]| -> TrajectorySet { ys.iter().cloned().map(Trajectory::new).collect() };
    let verifier = Verifier::new(to_set(targets));
    verifier.validate(policy.shape())?;
    let modes = modes.map(|(a, b)| (to_set(a), to_set(b)));
    let partition = partition_from(&verifier, modes)?;
    Environment::new(policy, verifier, partition)
}

/// Categorical only: sets every member of `set` to a common logit `L` so that
/// `mass(set) = target`, leaving other logits as they are. The closed form is
/// `exp(L) = target * R / (|set| * (1 - target))` with `R = sum over non-members
/// of exp(logit)` (so `R` is the remaining-answer count for zero logits);
/// a few Newton steps on `L` then remove rounding, and the achieved mass is
/// asserted to within 1e-9.
pub fn engineer_set_mass(policy: &Policy, set: &TrajectorySet, target: f64) -> Result<Policy> {
    let PolicyShape::Categorical { answers } = *policy.shape() else {
        return Err(Error::ShapeMismatch(
            "mass engineering is only defined for categorical policies".into(),
        ));
    };
    set.validate(policy.shape())?;
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::OutOfRange(format!(
            "target mass must lie strictly inside (0, 1), got {target}"
        )));
    }
    if set.is_empty() || set.len() == answers {
        return Err(Error::OutOfRange(
            "target set must be a nonempty proper subset".into(),
        ));
    }
    let members: Vec<usize> = set.iter().map(|y| y.tokens()[0]).collect();
    let logits = policy.params().as_slice().to_vec();
    let rest: Vec<f64> = (0..answers)
        .filter(|i| !members.contains(i))
        .map(|i| logits[i])
        .collect();
    // log R via log-sum-exp
    let max = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_r = max + rest.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let mut level = target.ln() - (-target).ln_1p() + log_r - (members.len() as f64).ln();

    let build = |level: f64| -> Result<Policy> {
        let mut next = logits.clone();
        for &m in &members {
            next[m] = level;
        }
        Policy::new(*policy.shape(), ParamVector::new(next)?)
    };

    // Newton on the smaller side of the split, where it is accurate.
    let complement: TrajectorySet = (0..answers)
        .filter(|i| !members.contains(i))
        .map(|i| Trajectory::new(vec![i]))
        .collect();
    let (side, goal, sign) = if target > 0.5 {
        (&complement, 1.0 - target, -1.0)
    } else {
        (set, target, 1.0)
    };
    let mut engineered = build(level)?;
    for _ in 0..6 {
        let m = engineered.mass(side)?;
        let slope = m * (1.0 - m);
        if m == goal || slope == 0.0 {
            break;
        }
        level -= sign * (m - goal) / slope;
        engineered = build(level)?;
    }
    let achieved = engineered.mass(set)?;
    if (achieved - target).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "engineered mass {achieved} misses target {target}"
        )));
    }
    Ok(engineered)
}

/// How sampled updates pick which samples to reinforce.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReinforceTarget {
    /// Only verifier-passing samples contribute (RLVR gating).
    #[default]
    Verified,
    /// Every sample contributes (plain likelihood ascent on the batch).
    AllSamples,
}

/// Experiment container: an environment plus training-loop settings.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub env: Environment,
    pub k: usize,
    pub eta: f64,
    pub steps: usize,
    pub seed: u64,
    pub replicates: usize,
    pub reinforce: ReinforceTarget,
}

impl Scenario {
    pub fn new(env: Environment, k: usize, eta: f64, steps: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::OutOfRange("k must be at least 1".into()));
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::OutOfRange(format!(
                "eta must be positive, got {eta}"
            )));
        }
        Ok(Self {
            env,
            k,
            eta,
            steps,
            seed,
            replicates: 1,
            reinforce: ReinforceTarget::Verified,
        })
    }

    pub fn with_replicates(mut self, replicates: usize) -> Result<Self> {
        if replicates == 0 {
            return Err(Error::OutOfRange("replicates must be at least 1".into()));
        }
        self.replicates = replicates;
        Ok(self)
    }

    pub fn with_reinforce(mut self, reinforce: ReinforceTarget) -> Self {
        self.reinforce = reinforce;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}
