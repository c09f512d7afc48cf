mod commands;
mod config;
mod error;
mod plot;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evcast_core::models::ModelKind;

use crate::commands::Context;
use crate::config::{PipelineConfig, WORKSPACE_ENV};
use crate::error::CliError;
use crate::workspace::Workspace;

/// Daily EV charging demand forecasting pipeline.
#[derive(Debug, Parser)]
#[command(name = "evcast", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Workspace directory for artifacts.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Override train.epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Override evaluate.seeds, e.g. `0,1,2`.
    #[arg(long, global = true, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Add the persistence baseline to the evaluated models.
    #[arg(long, global = true)]
    include_persistence: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse raw transactions into a daily station panel.
    Ingest {
        /// Raw transaction file; overrides paths.raw_data.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Build the station graph and the raster grid.
    Topology,
    /// Fit models and write checkpoints.
    Train {
        /// Models to train (comma separated); defaults to evaluate.models.
        #[arg(long, value_delimiter = ',')]
        model: Option<Vec<ModelKind>>,
        /// Horizons in days (comma separated); defaults to evaluate.horizons.
        #[arg(long, value_delimiter = ',')]
        horizon: Option<Vec<usize>>,
    },
    /// Score checkpoints on the test period and write the report.
    Evaluate {
        /// Train missing or stale checkpoints instead of failing.
        #[arg(long)]
        train_missing: bool,
    },
    /// Chart actual versus forecast totals for one horizon.
    Plot {
        #[arg(long)]
        horizon: usize,
        /// Models to include (comma separated); all evaluated models by default.
        #[arg(long, value_delimiter = ',')]
        model: Option<Vec<ModelKind>>,
    },
    /// Ingest, topology, train, evaluate and plot in sequence.
    Run {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn context(global: &Global) -> Result<Context, CliError> {
    let mut config = match &global.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(e) = global.epochs {
        config.train.epochs = e;
    }
    if let Some(s) = &global.seed_list {
        config.evaluate.seeds = s.clone();
    }
    config.evaluate.include_persistence |= global.include_persistence;
    config.validate()?;
    let env = std::env::var(WORKSPACE_ENV).ok();
    let root = config.resolve_workspace(global.workspace.as_deref(), env.as_deref());
    Ok(Context {
        config,
        workspace: Workspace::new(root),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::DefaultConfig = cli.command {
        print!("{}", config::default_toml());
        return Ok(());
    }
    let ctx = context(&cli.global)?;
    match cli.command {
        Command::Ingest { input } => ctx.ingest(input.as_deref()),
        Command::Topology => ctx.topology(),
        Command::Train { model, horizon } => {
            let models = model.unwrap_or_else(|| ctx.config.models());
            let horizons = horizon.unwrap_or_else(|| ctx.config.evaluate.horizons.clone());
            if horizons.contains(&0) {
                return Err(CliError::Config("--horizon must be ≥ 1".into()));
            }
            ctx.train(&models, &horizons)
        }
        Command::Evaluate { train_missing } => {
            let report = ctx.evaluate(train_missing)?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Plot { horizon, model } => {
            let svg = ctx.plot(horizon, model.as_deref())?;
            println!("{}", svg.display());
            Ok(())
        }
        Command::Run { input } => {
            ctx.ingest(input.as_deref())?;
            ctx.topology()?;
            let report = ctx.evaluate(true)?;
            print!("{}", report.to_table());
            for &h in &report.horizons {
                println!("{}", ctx.plot(h, None)?.display());
            }
            Ok(())
        }
        Command::DefaultConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
