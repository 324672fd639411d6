use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stochdyn_cli::commands;
use stochdyn_pipeline::config::DEFAULT_EPS1;
use stochdyn_cli::error::EXIT_INPUT;
use stochdyn_cli::{CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "stochdyn", version, about = "Stochastic open-system dynamics with neural-network extrapolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `io.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the ensemble, network initialization and data splits.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Ensemble size.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate an ensemble, store the trajectories and write stats.csv.
    Simulate(Common),
    /// Report the converged prefix of a stats table.
    Assess {
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPS1)]
        eps1: f64,
    },
    /// Fit a network to the stored ensemble.
    Train(Common),
    /// Extrapolate the stored ensemble with a trained checkpoint.
    Predict(Common),
    /// Full convergence-checked prediction loop.
    Pipeline(Common),
    /// Write plot-ready CSVs from a finished run directory.
    Export {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&c.config)?;
    cfg.apply_overrides(&Overrides {
        out: c.out.clone(),
        n: c.n,
        seed: c.seed,
        workers: c.workers,
    })?;
    if cfg.ensemble.workers > 0 {
        // a second initialization only happens in tests; ignore it
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.ensemble.workers)
            .build_global();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Simulate(c) => commands::cmd_simulate(&load(&c)?),
        Command::Assess { stats, eps1 } => commands::cmd_assess(&stats, eps1),
        Command::Train(c) => commands::cmd_train(&load(&c)?),
        Command::Predict(c) => commands::cmd_predict(&load(&c)?),
        Command::Pipeline(c) => commands::cmd_pipeline(&load(&c)?),
        Command::Export { out } => commands::cmd_export(&out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
