//! Experiment configuration: one JSON document, unknown keys rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::UpdateRule;
use crate::env::{make_bandit, make_sequence_env, Environment, ReinforceTarget, Scenario};
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::policy::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Figure1,
    Collinearity,
    Vanish,
    Collapse,
    Discovery,
    Estimators,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Figure1 => "figure1",
            ExperimentKind::Collinearity => "collinearity",
            ExperimentKind::Vanish => "vanish",
            ExperimentKind::Collapse => "collapse",
            ExperimentKind::Discovery => "discovery",
            ExperimentKind::Estimators => "estimators",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::Config(format!("unknown experiment {s:?}")))
    }
}

/// A `j1` grid: either a point count (evenly spaced over `[0, 1]`) or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Points(usize),
    Values(Vec<f64>),
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        let values = match self {
            GridSpec::Points(0) => Vec::new(),
            GridSpec::Points(1) => vec![0.0],
            GridSpec::Points(n) => (0..*n).map(|i| i as f64 / (*n - 1) as f64).collect(),
            GridSpec::Values(v) => v.clone(),
        };
        if values.is_empty() {
            return Err(Error::Config("j1 grid is empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("j1 grid value {bad} outside [0, 1]")));
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j1: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    pub answers: usize,
    pub correct: Vec<usize>,
    /// `[M1, M2]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<[Vec<usize>; 2]>,
    /// Engineer the start so that `pi_0(M2)` equals this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m2_mass: Option<f64>,
    /// Engineer the start so that `J1` equals this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct_mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub vocab: usize,
    pub horizon: usize,
    pub targets: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<[Vec<Vec<usize>>; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Bandit(BanditConfig),
    Sequence(SequenceConfig),
}

fn default_k() -> usize {
    4
}

fn default_eta() -> f64 {
    0.05
}

fn default_one() -> usize {
    1
}

fn default_rule() -> UpdateRule {
    UpdateRule::SampledReinforce
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub env: EnvConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_logits: Option<Vec<f64>>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub steps: usize,
    #[serde(default = "default_one")]
    pub replicates: usize,
    #[serde(default = "default_rule")]
    pub rule: UpdateRule,
    #[serde(default)]
    pub reinforce: ReinforceTarget,
}

impl ScenarioConfig {
    pub fn bandit(answers: usize, correct: Vec<usize>, modes: Option<[Vec<usize>; 2]>) -> Self {
        Self {
            env: EnvConfig::Bandit(BanditConfig {
                answers,
                correct,
                modes,
                m2_mass: None,
                correct_mass: None,
            }),
            initial_logits: None,
            k: default_k(),
            eta: default_eta(),
            steps: 0,
            replicates: 1,
            rule: default_rule(),
            reinforce: ReinforceTarget::Verified,
        }
    }

    /// Builds the environment, applying initial logits and mass engineering.
    pub fn environment(&self) -> Result<Environment> {
        let mut env = match &self.env {
            EnvConfig::Bandit(b) => make_bandit(
                b.answers,
                &b.correct,
                b.modes
                    .as_ref()
                    .map(|[m1, m2]| (m1.as_slice(), m2.as_slice())),
            )?,
            EnvConfig::Sequence(s) => make_sequence_env(
                s.vocab,
                s.horizon,
                &s.targets,
                s.modes
                    .as_ref()
                    .map(|[m1, m2]| (m1.as_slice(), m2.as_slice())),
            )?,
        };
        if let Some(logits) = &self.initial_logits {
            let policy =
                crate::policy::Policy::new(*env.policy.shape(), ParamVector::new(logits.clone())?)?;
            env = env.with_policy(policy)?;
        }
        if let EnvConfig::Bandit(b) = &self.env {
            if let Some(j1) = b.correct_mass {
                env = env.with_correct_mass(j1)?;
            }
            if let Some(eps) = b.m2_mass {
                env = env.with_m2_mass(eps)?;
            }
        }
        Ok(env)
    }

    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        Ok(
            Scenario::new(self.environment()?, self.k, self.eta, self.steps, seed)?
                .with_replicates(self.replicates)?
                .with_reinforce(self.reinforce),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional; must match the subcommand when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cases: Option<usize>,
    /// Batch size `m` for zero-signal probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<EstimatorKind>>,
}

impl ExperimentConfig {
    pub fn empty() -> Self {
        Self {
            experiment: None,
            seed: 0,
            output_dir: None,
            scenario: None,
            grid: GridConfig::default(),
            trials: None,
            groups: None,
            cases: None,
            batch_size: None,
            estimators: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn k_list(&self, default: &[usize]) -> Result<Vec<usize>> {
        let ks = self.grid.k.clone().unwrap_or_else(|| default.to_vec());
        if ks.is_empty() {
            return Err(Error::Config("k list is empty".into()));
        }
        if let Some(bad) = ks.iter().find(|&&k| k == 0 || k > crate::objectives::MAX_K) {
            return Err(Error::Config(format!("k = {bad} out of range")));
        }
        Ok(ks)
    }

    pub fn j1_grid(&self, default_points: usize) -> Result<Vec<f64>> {
        self.grid
            .j1
            .clone()
            .unwrap_or(GridSpec::Points(default_points))
            .values()
    }

    pub fn epsilon_list(&self, default: &[f64]) -> Result<Vec<f64>> {
        let eps = self
            .grid
            .epsilon
            .clone()
            .unwrap_or_else(|| default.to_vec());
        if eps.is_empty() {
            return Err(Error::Config("epsilon list is empty".into()));
        }
        if let Some(bad) = eps.iter().find(|e| !(0.0..1.0).contains(*e)) {
            return Err(Error::Config(format!("epsilon {bad} outside [0, 1)")));
        }
        Ok(eps)
    }

    pub fn count(name: &str, value: Option<usize>, default: usize) -> Result<usize> {
        match value.unwrap_or(default) {
            0 => Err(Error::Config(format!("{name} must be at least 1"))),
            n => Ok(n),
        }
    }
}
