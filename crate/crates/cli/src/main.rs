use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gpctc::commands::{bounds_cmd, simulate_cmd, train, BoundMode};
use gpctc::reproduce::{reproduce_cmd, Experiment};
use gpctc::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "gpctc",
    version,
    about = "GP-augmented computed-torque control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training data and optimize GP hyperparameters.
    Train(Common),
    /// Simulate the configured controller.
    Simulate(Common),
    /// Compute the ultimate-bound report.
    Bounds {
        #[command(flatten)]
        common: Common,
        /// radius, accuracy_for_radius or gains_for_radius.
        #[arg(long, default_value = "radius")]
        mode: String,
    },
    /// Run a bundled experiment and check it against its thresholds.
    Reproduce {
        /// table1, fig3 or bound_coverage.
        which: String,
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common, bundled: Option<Experiment>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match (&common.config, bundled) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(e)) => e.bundled_config(),
        (None, None) => return Err(CliError::Usage("--config <path> is required".into())),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("GPCTC_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "GPCTC_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("GPCTC_THREADS: {e}")))
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    init_threads()?;
    match cli.command {
        Command::Train(c) => train(&load(&c, None)?),
        Command::Simulate(c) => simulate_cmd(&load(&c, None)?),
        Command::Bounds { common, mode } => {
            let mode: BoundMode = mode.parse()?;
            bounds_cmd(&load(&common, None)?, mode)
        }
        Command::Reproduce { which, common } => {
            let which: Experiment = which.parse()?;
            reproduce_cmd(which, &load(&common, Some(which))?)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
