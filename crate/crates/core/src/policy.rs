//! Tabular softmax policies over finite trajectory spaces.
//!
//! A policy is either a single categorical choice among `N` answers or an
//! autoregressive generator over a vocabulary of size `V` with a fixed
//! horizon `T`. Autoregressive policies are fully tabular: every prefix of
//! length `0..T` owns its own row of `V` logits, so the probability of a
//! trajectory is the product of the softmax entries along its path and all
//! expectations can be computed exactly by enumeration.
//!
//! Row layout: the prefix `(a_1, .., a_d)` sits at row
//! `(V^d - 1) / (V - 1) + sum_i a_i V^(d-i)`, i.e. rows are grouped by depth
//! and ordered lexicographically within a depth. A categorical policy is
//! stored as the one-row case `V = N`, `T = 1`.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Index;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on the number of trajectories `enumerate` will produce.
pub const DEFAULT_ENUMERATION_CAP: usize = 1 << 20;

/// Flat vector of finite logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    /// Compensated dot product (error-free products and sums).
    pub fn dot(&self, other: &ParamVector) -> f64 {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for (a, b) in self.0.iter().zip(&other.0) {
            let p = a * b;
            let pe = a.mul_add(*b, -p);
            let t = s + p;
            let z = t - s;
            c += (s - (t - z)) + (p - z) + pe;
            s = t;
        }
        s + c
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> ParamVector {
        ParamVector::from_vec_unchecked(self.0.iter().map(|v| v * factor).collect())
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Vec<f64> {
        p.0
    }
}

/// A generated token sequence. Categorical answers are length-1 trajectories.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trajectory(Vec<usize>);

impl Trajectory {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }

    pub fn answer(index: usize) -> Self {
        Self(vec![index])
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, ")")
    }
}

/// Finite, duplicate-free set of trajectories, iterated in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrajectorySet(BTreeSet<Trajectory>);

impl TrajectorySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_answers<I: IntoIterator<Item = usize>>(answers: I) -> Self {
        Self(answers.into_iter().map(Trajectory::answer).collect())
    }

    pub fn contains(&self, y: &Trajectory) -> bool {
        self.0.contains(y)
    }

    pub fn insert(&mut self, y: Trajectory) -> bool {
        self.0.insert(y)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.0.iter()
    }

    pub fn is_disjoint(&self, other: &TrajectorySet) -> bool {
        self.0.is_disjoint(&other.0)
    }

    pub fn union(&self, other: &TrajectorySet) -> TrajectorySet {
        Self(self.0.union(&other.0).cloned().collect())
    }

    /// Checks every member against `shape`.
    pub fn validate(&self, shape: &PolicyShape) -> Result<()> {
        self.0.iter().try_for_each(|y| shape.check(y))
    }
}

impl FromIterator<Trajectory> for TrajectorySet {
    fn from_iter<I: IntoIterator<Item = Trajectory>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyShape {
    Categorical { answers: usize },
    Autoregressive { vocab: usize, horizon: usize },
}

impl PolicyShape {
    /// Branching factor of every logit row.
    pub fn vocab(&self) -> usize {
        match *self {
            PolicyShape::Categorical { answers } => answers,
            PolicyShape::Autoregressive { vocab, .. } => vocab,
        }
    }

    pub fn horizon(&self) -> usize {
        match *self {
            PolicyShape::Categorical { .. } => 1,
            PolicyShape::Autoregressive { horizon, .. } => horizon,
        }
    }

    /// `V^T`, or `None` on overflow.
    pub fn space_size(&self) -> Option<usize> {
        self.vocab()
            .checked_pow(u32::try_from(self.horizon()).ok()?)
    }

    /// Number of logit rows (prefix nodes of depth `< T`).
    pub fn rows(&self) -> Option<usize> {
        let v = self.vocab();
        let mut rows = 0usize;
        let mut level = 1usize;
        for _ in 0..self.horizon() {
            rows = rows.checked_add(level)?;
            level = level.checked_mul(v)?;
        }
        Some(rows)
    }

    pub fn param_count(&self) -> Option<usize> {
        self.rows()?.checked_mul(self.vocab())
    }

    fn check_dims(&self, cap: usize) -> Result<()> {
        let (v, t) = (self.vocab(), self.horizon());
        if v == 0 || t == 0 {
            return Err(Error::ShapeMismatch(format!(
                "vocabulary and horizon must be positive (got V={v}, T={t})"
            )));
        }
        match self.space_size() {
            Some(size) if size <= cap => Ok(()),
            _ => Err(Error::Capacity {
                size: (v as u128).saturating_pow(t as u32),
                cap,
            }),
        }
    }

    /// Validates a trajectory against this shape.
    pub fn check(&self, y: &Trajectory) -> Result<()> {
        if y.len() != self.horizon() {
            return Err(Error::ShapeMismatch(format!(
                "trajectory {y} has length {}, expected {}",
                y.len(),
                self.horizon()
            )));
        }
        if let Some(&bad) = y.tokens().iter().find(|&&a| a >= self.vocab()) {
            return Err(Error::ShapeMismatch(format!(
                "token {bad} in {y} is outside the vocabulary of size {}",
                self.vocab()
            )));
        }
        Ok(())
    }

    /// Row index of every prefix visited by `y` (caller has validated `y`).
    fn path_rows<'a>(&self, y: &'a Trajectory) -> impl Iterator<Item = (usize, usize)> + 'a {
        let v = self.vocab();
        let mut offset = 0usize;
        let mut level = 1usize;
        let mut within = 0usize;
        y.tokens().iter().map(move |&a| {
            let row = offset + within;
            offset += level;
            level *= v;
            within = within * v + a;
            (row, a)
        })
    }
}

/// Probability of `y` read directly off raw logits, softmaxing only the rows
/// on its path. Used by finite-difference checks that perturb single logits.
pub fn prob_with_params(shape: &PolicyShape, params: &[f64], y: &Trajectory) -> f64 {
    let v = shape.vocab();
    shape
        .path_rows(y)
        .map(|(row, a)| {
            let logits = &params[row * v..(row + 1) * v];
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            (logits[a] - max).exp() / z
        })
        .product()
}

/// Immutable tabular softmax policy. Row softmaxes are computed once at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    shape: PolicyShape,
    params: ParamVector,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(shape: PolicyShape, params: ParamVector) -> Result<Self> {
        shape.check_dims(DEFAULT_ENUMERATION_CAP)?;
        let expected = shape.param_count().expect("bounded by the cap");
        if params.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: params.len(),
            });
        }
        let probs = softmax_rows(params.as_slice(), shape.vocab());
        Ok(Self {
            shape,
            params,
            probs,
        })
    }

    /// Uniform (all-zero logits) policy.
    pub fn uniform(shape: PolicyShape) -> Result<Self> {
        shape.check_dims(DEFAULT_ENUMERATION_CAP)?;
        let n = shape.param_count().expect("bounded by the cap");
        Self::new(shape, ParamVector::zeros(n))
    }

    pub fn categorical(logits: Vec<f64>) -> Result<Self> {
        let answers = logits.len();
        Self::new(
            PolicyShape::Categorical { answers },
            ParamVector::new(logits)?,
        )
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Softmax of logit row `row`.
    pub fn row_probs(&self, row: usize) -> &[f64] {
        let v = self.shape.vocab();
        &self.probs[row * v..(row + 1) * v]
    }

    pub fn prob(&self, y: &Trajectory) -> Result<f64> {
        self.shape.check(y)?;
        Ok(self.prob_unchecked(y))
    }

    pub(crate) fn prob_unchecked(&self, y: &Trajectory) -> f64 {
        let v = self.shape.vocab();
        self.shape
            .path_rows(y)
            .map(|(row, a)| self.probs[row * v + a])
            .product()
    }

    pub fn log_prob(&self, y: &Trajectory) -> Result<f64> {
        self.shape.check(y)?;
        let v = self.shape.vocab();
        Ok(self
            .shape
            .path_rows(y)
            .map(|(row, a)| self.probs[row * v + a].ln())
            .sum())
    }

    /// Exact gradient of `log pi(y)`: on each visited row, one-hot of the
    /// chosen token minus the row softmax; zero elsewhere.
    pub fn log_prob_grad(&self, y: &Trajectory) -> Result<ParamVector> {
        self.shape.check(y)?;
        let mut out = vec![0.0; self.params.len()];
        self.add_score(y, 1.0, &mut out);
        Ok(ParamVector::from_vec_unchecked(out))
    }

    /// `out += weight * grad log pi(y)` for a validated `y`.
    pub(crate) fn add_score(&self, y: &Trajectory, weight: f64, out: &mut [f64]) {
        let v = self.shape.vocab();
        for (row, a) in self.shape.path_rows(y) {
            let base = row * v;
            for j in 0..v {
                let onehot = if j == a { 1.0 } else { 0.0 };
                out[base + j] += weight * (onehot - self.probs[base + j]);
            }
        }
    }

    /// All trajectories with their probabilities, in lexicographic order.
    pub fn enumerate(&self) -> Result<Vec<(Trajectory, f64)>> {
        self.enumerate_with_cap(DEFAULT_ENUMERATION_CAP)
    }

    pub fn enumerate_with_cap(&self, cap: usize) -> Result<Vec<(Trajectory, f64)>> {
        self.shape.check_dims(cap)?;
        let (v, t) = (self.shape.vocab(), self.shape.horizon());
        let size = self.shape.space_size().expect("checked");
        let mut out = Vec::with_capacity(size);
        let mut tokens = vec![0usize; t];
        for _ in 0..size {
            let y = Trajectory::new(tokens.clone());
            let p = self.prob_unchecked(&y);
            out.push((y, p));
            // odometer increment, last position fastest
            for pos in (0..t).rev() {
                tokens[pos] += 1;
                if tokens[pos] < v {
                    break;
                }
                tokens[pos] = 0;
            }
        }
        Ok(out)
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Trajectory {
        let v = self.shape.vocab();
        let mut tokens = Vec::with_capacity(self.shape.horizon());
        let mut offset = 0usize;
        let mut level = 1usize;
        let mut within = 0usize;
        for _ in 0..self.shape.horizon() {
            let row = offset + within;
            let a = sample_row(&self.probs[row * v..(row + 1) * v], rng);
            tokens.push(a);
            offset += level;
            level *= v;
            within = within * v + a;
        }
        Trajectory::new(tokens)
    }

    /// `n` i.i.d. draws.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Trajectory> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    /// Total probability of `set`.
    pub fn mass(&self, set: &TrajectorySet) -> Result<f64> {
        set.validate(&self.shape)?;
        Ok(set.iter().map(|y| self.prob_unchecked(y)).sum())
    }

    /// Exact gradient of `mass(set)`: `sum_y prob(y) * grad log prob(y)`.
    pub fn mass_grad(&self, set: &TrajectorySet) -> Result<ParamVector> {
        set.validate(&self.shape)?;
        let mut out = vec![0.0; self.params.len()];
        for y in set.iter() {
            self.add_score(y, self.prob_unchecked(y), &mut out);
        }
        Ok(ParamVector::from_vec_unchecked(out))
    }

    /// New policy with `params + eta * direction`.
    pub fn apply_update(&self, direction: &ParamVector, eta: f64) -> Result<Policy> {
        if direction.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                actual: direction.len(),
            });
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::OutOfRange(format!(
                "step size must be positive, got {eta}"
            )));
        }
        let next: Vec<f64> = self
            .params
            .iter()
            .zip(direction.iter())
            .map(|(p, d)| p + eta * d)
            .collect();
        Policy::new(self.shape, ParamVector::new(next)?)
    }
}

fn softmax_rows(params: &[f64], v: usize) -> Vec<f64> {
    let mut probs = Vec::with_capacity(params.len());
    for row in params.chunks_exact(v) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = probs.len();
        probs.extend(row.iter().map(|l| (l - max).exp()));
        let z: f64 = probs[start..].iter().sum();
        probs[start..].iter_mut().for_each(|p| *p /= z);
    }
    probs
}

/// Inverse-CDF draw from one softmax row.
fn sample_row<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the last partial sum
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn ar(v: usize, t: usize) -> Policy {
        Policy::uniform(PolicyShape::Autoregressive {
            vocab: v,
            horizon: t,
        })
        .unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uniform_categorical_prob() {
        let p = Policy::categorical(vec![0.0; 3]).unwrap();
        assert!(close(
            p.prob(&Trajectory::answer(0)).unwrap(),
            1.0 / 3.0,
            1e-15
        ));
    }

    #[test]
    fn uniform_autoregressive_prob() {
        assert!(close(
            ar(2, 2).prob(&Trajectory::new(vec![0, 1])).unwrap(),
            0.25,
            1e-15
        ));
    }

    #[test]
    fn ln2_logit_gives_one_half() {
        let p = Policy::categorical(vec![2f64.ln(), 0.0, 0.0]).unwrap();
        assert!(close(p.prob(&Trajectory::answer(0)).unwrap(), 0.5, 1e-15));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = ar(2, 2);
        assert!(matches!(
            p.prob(&Trajectory::new(vec![0])),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            p.prob(&Trajectory::new(vec![0, 2])),
            Err(Error::ShapeMismatch(_))
        ));
        let c = Policy::categorical(vec![0.0; 3]).unwrap();
        assert!(c.log_prob_grad(&Trajectory::new(vec![0, 0])).is_err());
    }

    #[test]
    fn score_of_uniform_categorical() {
        let p = Policy::categorical(vec![0.0; 3]).unwrap();
        let g = p.log_prob_grad(&Trajectory::answer(0)).unwrap();
        let want = [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0];
        for (a, b) in g.iter().zip(want) {
            assert!(close(*a, b, 1e-15));
        }
    }

    #[test]
    fn score_of_single_step_autoregressive() {
        let g = ar(2, 1).log_prob_grad(&Trajectory::new(vec![0])).unwrap();
        assert_eq!(g.as_slice(), &[0.5, -0.5]);
    }

    #[test]
    fn score_touches_only_visited_rows() {
        // V=2, T=2: rows are [root, prefix (0), prefix (1)]
        let g = ar(2, 2)
            .log_prob_grad(&Trajectory::new(vec![1, 0]))
            .unwrap();
        assert_eq!(g.as_slice(), &[-0.5, 0.5, 0.0, 0.0, 0.5, -0.5]);
    }

    #[test]
    fn enumerate_small_spaces() {
        let e = Policy::categorical(vec![0.0, 0.0])
            .unwrap()
            .enumerate()
            .unwrap();
        assert_eq!(
            e,
            vec![(Trajectory::answer(0), 0.5), (Trajectory::answer(1), 0.5)]
        );
        let e = ar(2, 2).enumerate().unwrap();
        let ys: Vec<_> = e.iter().map(|(y, _)| y.tokens().to_vec()).collect();
        assert_eq!(ys, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert!(e.iter().all(|(_, p)| *p == 0.25));
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        assert!(matches!(
            ar(2, 4).enumerate_with_cap(8),
            Err(Error::Capacity { .. })
        ));
        let big = Policy::uniform(PolicyShape::Autoregressive {
            vocab: 2,
            horizon: 21,
        });
        assert!(matches!(big, Err(Error::Capacity { .. })));
    }

    #[test]
    fn mass_of_sets() {
        let p = Policy::categorical(vec![0.0; 4]).unwrap();
        assert_eq!(p.mass(&TrajectorySet::new()).unwrap(), 0.0);
        assert_eq!(p.mass(&TrajectorySet::from_answers([0, 1])).unwrap(), 0.5);
        assert!(close(
            p.mass(&TrajectorySet::from_answers(0..4)).unwrap(),
            1.0,
            1e-15
        ));
    }

    #[test]
    fn mass_grad_of_full_space_vanishes() {
        let p = Policy::categorical(vec![0.3, -1.0, 2.0]).unwrap();
        let g = p.mass_grad(&TrajectorySet::from_answers(0..3)).unwrap();
        assert!(g.max_abs() < 1e-15);
    }

    #[test]
    fn mass_grad_uniform_single_answer() {
        let p = Policy::categorical(vec![0.0; 3]).unwrap();
        let g = p.mass_grad(&TrajectorySet::from_answers([0])).unwrap();
        let want = [2.0 / 9.0, -1.0 / 9.0, -1.0 / 9.0];
        for (a, b) in g.iter().zip(want) {
            assert!(close(*a, b, 1e-15));
        }
    }

    #[test]
    fn apply_update_arithmetic() {
        let p = Policy::categorical(vec![0.0, 0.0]).unwrap();
        let d = ParamVector::new(vec![1.0, -1.0]).unwrap();
        assert_eq!(
            p.apply_update(&d, 1.0).unwrap().params().as_slice(),
            &[1.0, -1.0]
        );
        let same = p.apply_update(&ParamVector::zeros(2), 0.5).unwrap();
        assert_eq!(same.params(), p.params());
        assert!(matches!(
            p.apply_update(&ParamVector::zeros(3), 1.0),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(p.apply_update(&d, 0.0).is_err());
    }

    #[test]
    fn non_finite_params_rejected() {
        assert!(matches!(
            ParamVector::new(vec![0.0, f64::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(Policy::categorical(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn sampling_uniform_frequency() {
        let p = Policy::categorical(vec![0.0, 0.0]).unwrap();
        let mut r = rng::stream(11, 0);
        let draws = p.sample(&mut r, 100_000);
        let zeros = draws.iter().filter(|y| y.tokens()[0] == 0).count() as f64 / 1e5;
        assert!((zeros - 0.5).abs() < 0.01, "{zeros}");
    }

    #[test]
    fn sampling_dominant_answer() {
        let p = Policy::categorical(vec![20.0, 0.0]).unwrap();
        let mut r = rng::stream(5, 0);
        assert!(p.sample(&mut r, 10).iter().all(|y| y.tokens() == [0]));
        let one = p.sample(&mut r, 1);
        assert_eq!(one.len(), 1);
        assert!(p.shape().check(&one[0]).is_ok());
    }

    #[test]
    fn sampling_is_reproducible() {
        let p = ar(3, 3);
        let a = p.sample(&mut rng::stream(9, 2), 50);
        let b = p.sample(&mut rng::stream(9, 2), 50);
        assert_eq!(a, b);
    }

    #[test]
    fn prob_with_params_matches_cached() {
        let shape = PolicyShape::Autoregressive {
            vocab: 3,
            horizon: 2,
        };
        let params: Vec<f64> = (0..shape.param_count().unwrap())
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        let p = Policy::new(shape, ParamVector::new(params.clone()).unwrap()).unwrap();
        for (y, prob) in p.enumerate().unwrap() {
            assert!(close(prob_with_params(&shape, &params, &y), prob, 1e-15));
        }
    }
}
