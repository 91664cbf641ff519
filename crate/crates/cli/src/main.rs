//! `roadsafe`: batch front end for trajectory safety analytics.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;

#[derive(Parser)]
#[command(name = "roadsafe", version, about = "Trajectory safety metrics and crash association")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t)]
    pub format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Map pixel-frame trajectories to the ground plane.
    Project {
        #[command(flatten)]
        common: Common,
        /// Keypoints JSON; defaults to the segment's or the config's.
        #[arg(long)]
        keypoints: Option<PathBuf>,
        #[arg(long)]
        segment: Option<String>,
    },
    /// Per-interval network-level safety metrics.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        segment: Option<String>,
    },
    /// Pairwise surrogate safety measures.
    Ssm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        segment: Option<String>,
    },
    /// Correlations, regressions, cross-segment tests and Shapley values
    /// between metrics and crash counts.
    Associate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        crashes: Option<PathBuf>,
    },
    /// Shapley attribution only.
    Shapley {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        crashes: Option<PathBuf>,
    },
    /// Generate a synthetic scenario with a planted crash relation.
    Synth {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Project {
            common,
            keypoints,
            segment,
        } => commands::project(&common, keypoints.as_deref(), segment.as_deref()),
        Command::Metrics { common, segment } => commands::metrics(&common, segment.as_deref()),
        Command::Ssm { common, segment } => commands::ssm(&common, segment.as_deref()),
        Command::Associate { common, crashes } => commands::associate(&common, crashes.as_deref()),
        Command::Shapley { common, crashes } => commands::shapley(&common, crashes.as_deref()),
        Command::Synth { common } => commands::synth(&common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion
                | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) => {
            e.exit()
        }
        Err(e) => {
            let f = Failure::new("usage", e.to_string().trim_end());
            eprintln!("{}", serde_json::to_string(&f).unwrap_or_default());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::to_string(&f).unwrap_or_else(|_| f.message.clone()));
            ExitCode::from(2)
        }
    }
}
