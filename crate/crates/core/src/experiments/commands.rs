//! One function per CLI subcommand. Each returns its artifacts in memory;
//! [`super::run_experiment`] writes them and the manifest.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{discovery_experiment, run_replicates, RunHistory};
use crate::env::{Environment, ModePartition, Verifier};
use crate::error::{Error, Result};
use crate::estimators::{estimate, zero_signal_prob, EstimatorKind};
use crate::gradcheck::{fd_grad_jk, relative_error, FdConfig};
use crate::objectives::{alpha, grad_j1_exact, grad_jk_exact, j1_exact, jk_from_j1};
use crate::policy::{ParamVector, Policy, PolicyShape, Trajectory, TrajectorySet};
use crate::rng;

use super::config::{ExperimentConfig, ScenarioConfig};
use super::output::{fmt_f64, CsvTable};

pub const DEFAULT_K_LIST: [usize; 4] = [2, 4, 8, 16];
pub const DEFAULT_J1_POINTS: usize = 101;
pub const DEFAULT_EPSILONS: [f64; 5] = [1e-4, 1e-3, 1e-2, 0.1, 0.5];
pub const DEFAULT_DISCOVERY_K: [usize; 5] = [1, 2, 4, 8, 16];
/// Identity checks (cosine, componentwise ratio) must hold to this.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Artifacts produced by a command plus any failed numerical checks.
#[derive(Debug, Default)]
pub struct Outcome {
    pub artifacts: Vec<(String, Vec<u8>)>,
    pub failures: Vec<String>,
}

impl Outcome {
    fn single(name: &str, table: CsvTable) -> Self {
        Self {
            artifacts: vec![(name.to_owned(), table.to_bytes())],
            failures: Vec::new(),
        }
    }
}

fn int(n: usize) -> String {
    n.to_string()
}

/// Columns `j1,k,jk,alpha,alpha_scaled`, one curve per `k`.
pub fn cmd_figure1(config: &ExperimentConfig) -> Result<Outcome> {
    let grid = config.j1_grid(DEFAULT_J1_POINTS)?;
    let ks = config.k_list(&DEFAULT_K_LIST)?;
    let mut table = CsvTable::new(&["j1", "k", "jk", "alpha", "alpha_scaled"]);
    for &k in &ks {
        for &j1 in &grid {
            let a = alpha(j1, k)?;
            table.push(vec![
                fmt_f64(j1),
                int(k),
                fmt_f64(jk_from_j1(j1, k)?),
                fmt_f64(a),
                fmt_f64(0.5 * a),
            ]);
        }
    }
    Ok(Outcome::single("figure1.csv", table))
}

/// One seeded random (policy, verifier, k) case for the gradient-identity checks.
///
/// Half the cases are categorical with 2..=64 answers, half autoregressive
/// with `V^T <= 4096`; logits are uniform in `[-2, 2]`; the correct set has
/// between 1 and 16 members (at most a quarter of the space), except every
/// 20th case, whose correct set is empty.
pub fn random_case(seed: u64, index: usize, ks: &[usize]) -> Result<(Policy, Verifier, usize)> {
    let mut r = rng::stream(seed, index as u64);
    let shape = if r.random_bool(0.5) {
        PolicyShape::Categorical {
            answers: r.random_range(2..=64),
        }
    } else {
        let vocab = r.random_range(2..=4usize);
        let max_horizon = match vocab {
            2 => 12,
            3 => 7,
            _ => 6,
        };
        PolicyShape::Autoregressive {
            vocab,
            horizon: r.random_range(1..=max_horizon),
        }
    };
    let n_params = shape.param_count().expect("small shape");
    let logits: Vec<f64> = (0..n_params).map(|_| r.random_range(-2.0..=2.0)).collect();
    let policy = Policy::new(shape, ParamVector::new(logits)?)?;

    let size = shape.space_size().expect("small shape");
    let mut correct = TrajectorySet::new();
    if index % 20 != 19 {
        let count = r.random_range(1..=(size / 4).clamp(1, 16));
        for flat in sample_indices(&mut r, size, count) {
            correct.insert(unflatten(flat, &shape));
        }
    }
    let k = ks[index % ks.len()];
    Ok((policy, Verifier::new(correct), k))
}

fn unflatten(mut flat: usize, shape: &PolicyShape) -> Trajectory {
    let (v, t) = (shape.vocab(), shape.horizon());
    let mut tokens = vec![0; t];
    for pos in (0..t).rev() {
        tokens[pos] = flat % v;
        flat /= v;
    }
    Trajectory::new(tokens)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollinearityRow {
    pub case_id: usize,
    pub k: usize,
    pub j1: f64,
    /// `None` when a gradient is zero (degenerate case).
    pub cosine: Option<f64>,
    pub ratio_error: Option<f64>,
    pub fd_error: f64,
}

impl CollinearityRow {
    pub fn degenerate(&self) -> bool {
        self.cosine.is_none()
    }
}

/// Identity and finite-difference checks for one case.
pub fn collinearity_row(
    case_id: usize,
    policy: &Policy,
    verifier: &Verifier,
    k: usize,
    fd: FdConfig,
) -> Result<CollinearityRow> {
    let j1 = j1_exact(policy, verifier)?;
    let a = alpha(j1, k)?;
    let g1 = grad_j1_exact(policy, verifier)?;
    let gk = grad_jk_exact(policy, verifier, k)?;
    let fd_grad = fd_grad_jk(policy, verifier, k, fd.h)?;
    let fd_error = relative_error(gk.as_slice(), fd_grad.as_slice());

    let degenerate = g1.is_zero() || gk.is_zero();
    let (cosine, ratio_error) = if degenerate {
        (None, None)
    } else {
        let cosine = g1.dot(&gk) / (g1.norm() * gk.norm());
        let ratio_error = g1
            .iter()
            .zip(gk.iter())
            .filter(|(x, _)| **x != 0.0)
            .map(|(x, y)| ((y / x) - a).abs() / a)
            .fold(0.0, f64::max);
        (Some(cosine), Some(ratio_error))
    };
    Ok(CollinearityRow {
        case_id,
        k,
        j1,
        cosine,
        ratio_error,
        fd_error,
    })
}

/// Columns `case_id,k,j1,cosine,ratio_error,fd_error`. Degenerate cases
/// (a zero gradient) leave `cosine` and `ratio_error` empty.
pub fn cmd_collinearity(config: &ExperimentConfig) -> Result<Outcome> {
    let cases = ExperimentConfig::count("cases", config.cases, 100)?;
    let ks = config.k_list(&DEFAULT_K_LIST)?;
    let fd = FdConfig::default();
    let rows: Vec<CollinearityRow> = (0..cases)
        .into_par_iter()
        .map(|i| {
            let (policy, verifier, k) = random_case(config.seed, i, &ks)?;
            collinearity_row(i, &policy, &verifier, k, fd)
        })
        .collect::<Result<_>>()?;

    let mut table = CsvTable::new(&["case_id", "k", "j1", "cosine", "ratio_error", "fd_error"]);
    let mut failures = Vec::new();
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for row in &rows {
        if let (Some(c), Some(r)) = (row.cosine, row.ratio_error) {
            if (c - 1.0).abs() > IDENTITY_TOL || r > IDENTITY_TOL {
                failures.push(format!("case {}: cosine {c}, ratio error {r}", row.case_id));
            }
        }
        if row.fd_error.is_nan() || row.fd_error > fd.rel_tol {
            failures.push(format!(
                "case {}: finite-difference error {}",
                row.case_id, row.fd_error
            ));
        }
        table.push(vec![
            int(row.case_id),
            int(row.k),
            fmt_f64(row.j1),
            opt(row.cosine),
            opt(row.ratio_error),
            fmt_f64(row.fd_error),
        ]);
    }
    let mut out = Outcome::single("collinearity.csv", table);
    out.failures = failures;
    Ok(out)
}

fn scenario_or(config: &ExperimentConfig, default: ScenarioConfig) -> ScenarioConfig {
    config.scenario.clone().unwrap_or(default)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VanishRow {
    pub j1: f64,
    pub k: usize,
    pub grad_norm_j1: f64,
    pub grad_norm_jk: f64,
    pub zero_signal_prob_at_m: f64,
}

/// Exact gradient norms along a `J1` sweep. The sweep moves the common logit
/// of the correct answers so that `J1` hits each grid value; at the grid
/// endpoints 0 and 1 the gradients are their limits, zero.
pub fn vanish_rows(
    env: &Environment,
    grid: &[f64],
    ks: &[usize],
    batch: usize,
) -> Result<Vec<VanishRow>> {
    if !matches!(env.policy.shape(), PolicyShape::Categorical { .. }) {
        return Err(Error::Config(
            "the vanish sweep needs a categorical (bandit) scenario".into(),
        ));
    }
    let policies: Vec<Option<Policy>> = grid
        .iter()
        .map(|&j1| {
            if j1 > 0.0 && j1 < 1.0 {
                env.with_correct_mass(j1).map(|e| Some(e.policy))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(grid.len() * ks.len());
    for &k in ks {
        for (&j1, policy) in grid.iter().zip(&policies) {
            let (n1, nk) = match policy {
                Some(p) => (
                    grad_j1_exact(p, &env.verifier)?.norm(),
                    grad_jk_exact(p, &env.verifier, k)?.norm(),
                ),
                None => (0.0, 0.0),
            };
            rows.push(VanishRow {
                j1,
                k,
                grad_norm_j1: n1,
                grad_norm_jk: nk,
                zero_signal_prob_at_m: zero_signal_prob(j1, batch)?,
            });
        }
    }
    Ok(rows)
}

/// Columns `j1,k,grad_norm_j1,grad_norm_jk,zero_signal_prob_at_m`.
pub fn cmd_vanish(config: &ExperimentConfig) -> Result<Outcome> {
    let grid = config.j1_grid(DEFAULT_J1_POINTS)?;
    let ks = config.k_list(&DEFAULT_K_LIST)?;
    let batch = ExperimentConfig::count("batch_size", config.batch_size, 8)?;
    let env = scenario_or(config, ScenarioConfig::bandit(10, vec![0], None)).environment()?;
    let rows = vanish_rows(&env, &grid, &ks, batch)?;
    let mut table = CsvTable::new(&[
        "j1",
        "k",
        "grad_norm_j1",
        "grad_norm_jk",
        "zero_signal_prob_at_m",
    ]);
    for r in rows {
        table.push(vec![
            fmt_f64(r.j1),
            int(r.k),
            fmt_f64(r.grad_norm_j1),
            fmt_f64(r.grad_norm_jk),
            fmt_f64(r.zero_signal_prob_at_m),
        ]);
    }
    Ok(Outcome::single("vanish.csv", table))
}

pub const STEP_COLUMNS: [&str; 9] = [
    "t",
    "p_m1",
    "p_m2",
    "j1",
    "jk",
    "gap",
    "discovered_m2",
    "grad_norm",
    "batch_correct",
];

pub fn history_table(h: &RunHistory) -> CsvTable {
    let mut table = CsvTable::new(&STEP_COLUMNS);
    for r in &h.records {
        table.push(vec![
            int(r.t),
            fmt_f64(r.p_m1),
            fmt_f64(r.p_m2),
            fmt_f64(r.j1),
            fmt_f64(r.jk),
            fmt_f64(r.gap),
            int(usize::from(r.discovered_m2)),
            fmt_f64(r.grad_norm),
            int(r.batch_correct),
        ]);
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateSummary {
    pub replicate: usize,
    pub total_discoveries: usize,
    pub initial_p_m1: f64,
    pub final_p_m1: f64,
    pub initial_gap: f64,
    pub final_gap: f64,
    pub steps_to_gap_below: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollapseSummary {
    pub replicates: usize,
    pub never_discovered_fraction: f64,
    pub mean_final_p_m1: f64,
    pub mean_final_gap: f64,
    pub gap_threshold: f64,
    pub per_replicate: Vec<ReplicateSummary>,
}

impl CollapseSummary {
    pub fn from_histories(histories: &[RunHistory]) -> Self {
        let n = histories.len().max(1) as f64;
        let per_replicate: Vec<ReplicateSummary> = histories
            .iter()
            .map(|h| ReplicateSummary {
                replicate: h.scenario.replicate,
                total_discoveries: h.summary.total_discoveries,
                initial_p_m1: h.initial().p_m1,
                final_p_m1: h.last().p_m1,
                initial_gap: h.initial().gap,
                final_gap: h.last().gap,
                steps_to_gap_below: h.summary.steps_to_gap_below,
            })
            .collect();
        Self {
            replicates: histories.len(),
            never_discovered_fraction: histories.iter().filter(|h| !h.discovered()).count() as f64
                / n,
            mean_final_p_m1: histories.iter().map(|h| h.last().p_m1).sum::<f64>() / n,
            mean_final_gap: histories.iter().map(|h| h.last().gap).sum::<f64>() / n,
            gap_threshold: crate::dynamics::GAP_THRESHOLD,
            per_replicate,
        }
    }
}

pub fn replicate_file_name(r: usize) -> String {
    format!("collapse_replicate_{r:03}.csv")
}

/// One CSV per replicate plus `collapse_summary.json`.
pub fn cmd_collapse(config: &ExperimentConfig) -> Result<Outcome> {
    let sc = config
        .scenario
        .as_ref()
        .ok_or_else(|| Error::Config("collapse needs a scenario".into()))?;
    let scenario = sc.scenario(config.seed)?;
    if scenario.env.partition.is_none() {
        return Err(Error::Config("collapse needs a scenario with modes".into()));
    }
    let histories = run_replicates(&scenario, sc.rule)?;
    let mut artifacts: Vec<(String, Vec<u8>)> = histories
        .iter()
        .map(|h| {
            (
                replicate_file_name(h.scenario.replicate),
                history_table(h).to_bytes(),
            )
        })
        .collect();
    let summary = CollapseSummary::from_histories(&histories);
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    artifacts.push(("collapse_summary.json".to_owned(), json));
    Ok(Outcome {
        artifacts,
        failures: Vec::new(),
    })
}

/// Columns `epsilon,k,empirical_rate,exact_rate,bound_keps,trials`.
pub fn cmd_discovery(config: &ExperimentConfig) -> Result<Outcome> {
    let eps_list = config.epsilon_list(&DEFAULT_EPSILONS)?;
    let ks = config.k_list(&DEFAULT_DISCOVERY_K)?;
    let trials = ExperimentConfig::count("trials", config.trials, 100_000)?;
    let sc = scenario_or(
        config,
        ScenarioConfig::bandit(100, vec![0, 1], Some([vec![0], vec![1]])),
    );
    let base = sc.scenario(config.seed)?;
    if base.env.partition.is_none() {
        return Err(Error::Config(
            "discovery needs a scenario with modes".into(),
        ));
    }
    let mut table = CsvTable::new(&[
        "epsilon",
        "k",
        "empirical_rate",
        "exact_rate",
        "bound_keps",
        "trials",
    ]);
    let mut row = 0u64;
    for &eps in &eps_list {
        let env = if eps == 0.0 {
            // no mass on M2: treat the whole correct set as discovered
            let v = base.env.verifier.clone();
            let partition = ModePartition::new(v.correct_set().clone(), TrajectorySet::new(), &v)?;
            Environment::new(base.env.policy.clone(), v, Some(partition))?
        } else {
            base.env.with_m2_mass(eps)?
        };
        for &k in &ks {
            let mut s = base.clone().with_seed(rng::derive_seed(config.seed, row));
            s.env = env.clone();
            s.k = k;
            let d = discovery_experiment(&s, trials)?;
            table.push(vec![
                fmt_f64(eps),
                int(k),
                fmt_f64(d.empirical_rate),
                fmt_f64(d.exact_rate),
                fmt_f64(d.bound_keps),
                int(d.trials),
            ]);
            row += 1;
        }
    }
    Ok(Outcome::single("discovery.csv", table))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorRow {
    pub estimator: EstimatorKind,
    pub k: usize,
    pub groups: usize,
    pub bias_norm: f64,
    pub variance_trace: f64,
    pub zero_fraction: f64,
    pub se_sigmas: f64,
}

/// Runs one estimator on stream `(seed, stream_index)` and scores it against
/// the exact gradient (`grad J1` for Pass1MC, `grad J_k` otherwise).
pub fn estimator_row(
    kind: EstimatorKind,
    policy: &Policy,
    verifier: &Verifier,
    k: usize,
    groups: usize,
    seed: u64,
    stream_index: u64,
) -> Result<EstimatorRow> {
    let k = if kind == EstimatorKind::Pass1MC { 1 } else { k };
    let mut r = rng::stream(seed, stream_index);
    let est = estimate(kind, policy, verifier, k, groups, &mut r)?;
    let exact = grad_jk_exact(policy, verifier, k)?;
    Ok(EstimatorRow {
        estimator: kind,
        k,
        groups: est.groups,
        bias_norm: est.bias_norm(&exact),
        variance_trace: est.variance_trace(),
        zero_fraction: est.zero_fraction,
        se_sigmas: est.max_sigmas(&exact),
    })
}

/// Columns `estimator,k,groups,bias_norm,variance_trace,zero_fraction,se_sigmas`.
pub fn cmd_estimators(config: &ExperimentConfig) -> Result<Outcome> {
    let ks = config.k_list(&[4])?;
    let groups = ExperimentConfig::count("groups", config.groups, 100_000)?;
    let kinds = config
        .estimators
        .clone()
        .unwrap_or_else(|| EstimatorKind::ALL.to_vec());
    if kinds.is_empty() {
        return Err(Error::Config("estimator list is empty".into()));
    }
    if kinds.contains(&EstimatorKind::PassKLeaveOneOut) && ks.contains(&1) {
        return Err(Error::Config("PassKLeaveOneOut needs k >= 2".into()));
    }
    let env = scenario_or(config, ScenarioConfig::bandit(10, vec![3], None)).environment()?;

    let mut jobs = Vec::new();
    for &k in &ks {
        for &kind in &kinds {
            let first_k = k == ks[0];
            if kind != EstimatorKind::Pass1MC || first_k {
                jobs.push((kind, k));
            }
        }
    }
    let mut table = CsvTable::new(&[
        "estimator",
        "k",
        "groups",
        "bias_norm",
        "variance_trace",
        "zero_fraction",
        "se_sigmas",
    ]);
    for (i, (kind, k)) in jobs.into_iter().enumerate() {
        let row = estimator_row(
            kind,
            &env.policy,
            &env.verifier,
            k,
            groups,
            config.seed,
            i as u64,
        )?;
        table.push(vec![
            row.estimator.to_string(),
            int(row.k),
            int(row.groups),
            fmt_f64(row.bias_norm),
            fmt_f64(row.variance_trace),
            fmt_f64(row.zero_fraction),
            fmt_f64(row.se_sigmas),
        ]);
    }
    Ok(Outcome::single("estimators.csv", table))
}
