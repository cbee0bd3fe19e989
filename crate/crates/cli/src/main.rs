//! `crpca` — experiment harness for compressive robust PCA.
//!
//! Every subcommand reads one JSON config (see [`config::ExperimentConfig`])
//! and writes CSV artifacts into an output directory. Exit codes: 0 on
//! success, 2 on configuration problems, 3 on numerical failure inside the
//! algorithms.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::CmdError;
use config::{ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "crpca", version, about = "Turbo message passing for compressive robust PCA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory for CSV artifacts (default: config's `out`, else `.`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded recovery trials; write per-trial traces and a summary.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write each trial's binary instance recipe.
        #[arg(long)]
        dump_instance: bool,
    },
    /// Track empirical message variances against the state-evolution
    /// prediction.
    SeTrack {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep a (rho, gamma) grid: empirical success rates plus predicted
    /// convergence thresholds per cell.
    PhaseGrid {
        #[command(flatten)]
        common: Common,
    },
    /// Capture module input/output errors at one iteration as QQ data.
    Qq {
        #[command(flatten)]
        common: Common,
    },
    /// Cross-check closed-form spectral divergences against the Monte Carlo
    /// probe estimator.
    DivergenceCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate the low-rank transfer function by Monte Carlo.
    TransferTable {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Run { common, .. }
            | Command::SeTrack { common }
            | Command::PhaseGrid { common }
            | Command::Qq { common }
            | Command::DivergenceCheck { common }
            | Command::TransferTable { common } => common,
        }
    }

    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Run { .. } => ExperimentKind::Run,
            Command::SeTrack { .. } => ExperimentKind::SeTrack,
            Command::PhaseGrid { .. } => ExperimentKind::PhaseGrid,
            Command::Qq { .. } => ExperimentKind::Qq,
            Command::DivergenceCheck { .. } => ExperimentKind::DivergenceCheck,
            Command::TransferTable { .. } => ExperimentKind::TransferTable,
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CmdError> {
    let common = cli.command.common();
    let mut config = ExperimentConfig::load(&common.config)?;
    if config.experiment != cli.command.kind() {
        return Err(config::ConfigError(format!(
            "config is for `{}` but the `{}` subcommand was invoked",
            config.experiment,
            cli.command.kind()
        ))
        .into());
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(threads) = common.threads {
        // A second build_global in one process (e.g. under tests) is harmless:
        // the pool is already sized, so the error is ignored.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let out = common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;

    match &cli.command {
        Command::Run { dump_instance, .. } => commands::cmd_run(&config, &out, *dump_instance),
        Command::SeTrack { .. } => commands::cmd_se_track(&config, &out),
        Command::PhaseGrid { .. } => commands::cmd_phase_grid(&config, &out),
        Command::Qq { .. } => commands::cmd_qq(&config, &out),
        Command::DivergenceCheck { .. } => commands::cmd_divergence_check(&config, &out),
        Command::TransferTable { .. } => commands::cmd_transfer_table(&config, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crpca: {e}");
            let code = match e {
                CmdError::Config(_) | CmdError::Io(_) => 2,
                CmdError::Core(ref err) if err.is_numerical() => 3,
                CmdError::Core(_) => 2,
            };
            ExitCode::from(code)
        }
    }
}
