//! `topoprior` command-line pipeline.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use topoprior::forecast::Variant;

use crate::commands::SynthKind;
use crate::config::{Loaded, ModelKind};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "topoprior", version, about = "Population-level topological priors for forecasting")]
struct Cli {
    /// Pipeline config (TOML, or JSON when the extension is .json).
    #[arg(long, global = true, default_value = "topoprior.toml")]
    config: PathBuf,
    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Persistence diagram and landscape fingerprint of the corpus.
    Fingerprint {
        /// Also write the correlation-distance graph as JSON lines.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Per-series sheaf coordinates.
    Sheaf,
    /// Topological signal-to-noise screening row.
    Screen {
        /// Dataset label for the printed row.
        #[arg(long)]
        name: Option<String>,
        /// Flag the H1 ratio as possibly inflated by calendar artifacts.
        #[arg(long)]
        artifact_suspect: bool,
    },
    /// Train the transformer backbone.
    TrainBackbone {
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Precompute base forecasts for every window.
    BuildCache,
    /// Train the residual adapter over cached base forecasts.
    Adapt {
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Matched-control comparison across seeds.
    Ablate {
        /// Comma-separated controls, e.g. vanilla,rand,shuffle,tda,tda+sheaf.
        #[arg(long)]
        variants: Option<String>,
    },
    /// Score a trained model on a window split.
    Eval {
        #[arg(long, value_enum)]
        model: Option<ModelKind>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Write a synthetic corpus as a wide CSV.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Synth { kind, out } = &cli.command {
        return commands::cmd_synth(*kind, out, cli.seed.unwrap_or(0));
    }
    let l = Loaded::read(&cli.config, cli.seed)?;
    match cli.command {
        Command::Fingerprint { graph } => commands::cmd_fingerprint(&l, graph.as_deref()),
        Command::Sheaf => commands::cmd_sheaf(&l),
        Command::Screen { name, artifact_suspect } => commands::cmd_screen(&l, name, artifact_suspect),
        Command::TrainBackbone { variant } => commands::cmd_train_backbone(&l, variant),
        Command::BuildCache => commands::cmd_build_cache(&l),
        Command::Adapt { variant } => commands::cmd_adapt(&l, variant),
        Command::Ablate { variants } => commands::cmd_ablate(&l, variants),
        Command::Eval { model, variant } => commands::cmd_eval(&l, model, variant),
        Command::Synth { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
