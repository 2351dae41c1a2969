use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use passk_lab::experiments::{self, ExperimentConfig, ExperimentKind, OUT_DIR_ENV};
use passk_lab::Error;

/// Exact and Monte Carlo experiments on the pass@k objective.
#[derive(Parser)]
#[command(name = "passk-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// J_k and alpha_k against J1 (plot data; alpha also halved).
    Figure1(RunArgs),
    /// grad J_k = alpha_k grad J1 on random cases, plus finite differences.
    Collinearity(RunArgs),
    /// Exact gradient norms and zero-signal probabilities along a J1 sweep.
    Vanish(RunArgs),
    /// Two-mode training runs: mass concentration and the pass@k gap.
    Collapse(RunArgs),
    /// First-batch discovery rates of an epsilon-mass mode.
    Discovery(RunArgs),
    /// Bias and variance of the Monte Carlo gradient estimators.
    Estimators(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the environment and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long)]
    threads: Option<usize>,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::Figure1(a) => (ExperimentKind::Figure1, a),
            Command::Collinearity(a) => (ExperimentKind::Collinearity, a),
            Command::Vanish(a) => (ExperimentKind::Vanish, a),
            Command::Collapse(a) => (ExperimentKind::Collapse, a),
            Command::Discovery(a) => (ExperimentKind::Discovery, a),
            Command::Estimators(a) => (ExperimentKind::Estimators, a),
        }
    }
}

fn execute(kind: ExperimentKind, args: RunArgs) -> Result<PathBuf, Error> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let env_out = std::env::var(OUT_DIR_ENV).ok();
    let out = experiments::resolve_out_dir(args.out.as_deref(), env_out.as_deref(), &config, kind);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| experiments::run_experiment(kind, &config, &out))?;
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();
    match execute(kind, args) {
        Ok(out) => {
            println!("{kind}: wrote {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("passk-lab {kind}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
