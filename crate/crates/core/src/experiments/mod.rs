//! Config-driven experiments behind the `passk-lab` CLI.
//!
//! Every subcommand writes its CSV/JSON artifacts and a `manifest.json`
//! (config echo, artifact hashes, tool version, wall-clock time) into the
//! output directory. Artifacts depend only on the config and seed, never on
//! the thread count.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};

pub use commands::Outcome;
pub use config::{ExperimentConfig, ExperimentKind};
pub use output::{CsvTable, RunManifest};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "PASSK_LAB_OUT";

/// `--out` beats `$PASSK_LAB_OUT`, which beats the config's `output_dir`;
/// the fallback is `passk-lab-out/<experiment>`.
pub fn resolve_out_dir(
    cli: Option<&Path>,
    env_value: Option<&str>,
    config: &ExperimentConfig,
    kind: ExperimentKind,
) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| env_value.filter(|s| !s.is_empty()).map(PathBuf::from))
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("passk-lab-out").join(kind.name()))
}

/// Computes a command's artifacts without touching the filesystem.
pub fn compute(kind: ExperimentKind, config: &ExperimentConfig) -> Result<Outcome> {
    if let Some(named) = config.experiment {
        if named != kind {
            return Err(Error::Config(format!(
                "config is for experiment {named}, not {kind}"
            )));
        }
    }
    match kind {
        ExperimentKind::Figure1 => commands::cmd_figure1(config),
        ExperimentKind::Collinearity => commands::cmd_collinearity(config),
        ExperimentKind::Vanish => commands::cmd_vanish(config),
        ExperimentKind::Collapse => commands::cmd_collapse(config),
        ExperimentKind::Discovery => commands::cmd_discovery(config),
        ExperimentKind::Estimators => commands::cmd_estimators(config),
    }
}

/// Runs `kind`, writes artifacts and the manifest into `out_dir`. Numerical
/// check failures are reported as [`Error::Validation`] after everything has
/// been written.
pub fn run_experiment(
    kind: ExperimentKind,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<RunManifest> {
    let start = Instant::now();
    let outcome = compute(kind, config)?;
    let artifacts = output::write_artifacts(out_dir, &outcome.artifacts)?;
    let mut echo = config.clone();
    echo.experiment = Some(kind);
    echo.output_dir = Some(out_dir.to_path_buf());
    let manifest = RunManifest {
        experiment: kind.name().to_owned(),
        config: echo,
        artifacts,
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    std::fs::write(out_dir.join(output::MANIFEST_FILE), json)?;
    if !outcome.failures.is_empty() {
        return Err(Error::Validation(outcome.failures.join("; ")));
    }
    Ok(manifest)
}
