//! Exact and Monte Carlo analysis of the pass@k objective on enumerable
//! toy policies.
//!
//! The crate is organized bottom-up:
//!
//! - [`policy`]: tabular softmax policies with exact enumeration, sampling
//!   and score-function gradients.
//! - [`env`]: set-membership verifiers, two-mode partitions, scenarios.
//! - [`objectives`]: exact `J1`, `J_k`, `alpha_k`, their gradients and the gap.
//! - [`estimators`]: Monte Carlo gradient estimators and the pass@k
//!   evaluation estimator.
//! - [`dynamics`]: training loops and the exploration-collapse measurements.
//! - [`experiments`]: config-driven experiment runners behind the CLI.

pub mod dynamics;
pub mod env;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod gradcheck;
pub mod objectives;
pub mod policy;
pub mod rng;

pub use env::{make_bandit, make_sequence_env, Environment, ModePartition, Scenario, Verifier};
pub use error::{Error, Result};
pub use policy::{ParamVector, Policy, PolicyShape, Trajectory, TrajectorySet};
