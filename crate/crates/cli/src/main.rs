//! `stpack`: simulate, train and evaluate item–face selection policies.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stpack", version, about = "Semi-online 3D packing with reorientation and time costs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run seeded episodes of one policy.
    Simulate {
        #[command(flatten)]
        o: Overrides,
        /// Also write the step trace of the first episode.
        #[arg(long)]
        trace: bool,
        /// Also write the first episode's items as JSON lines.
        #[arg(long)]
        export_items: bool,
    },
    /// Train the selection network.
    Train {
        #[command(flatten)]
        o: Overrides,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sweep the preference grid and extract the Pareto front.
    Pareto {
        #[command(flatten)]
        o: Overrides,
    },
    /// Compare several policies on the same seeds.
    Bench {
        #[command(flatten)]
        o: Overrides,
    },
    /// Evaluate policies against the share of variable-shaped items.
    Variability {
        #[command(flatten)]
        o: Overrides,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { o, trace, export_items } => commands::simulate(&RunConfig::resolve(&o)?, trace, export_items),
        Command::Train { o, resume } => commands::train(&RunConfig::resolve(&o)?, resume.as_deref()),
        Command::Pareto { o } => commands::pareto(&RunConfig::resolve(&o)?),
        Command::Bench { o } => commands::bench(&RunConfig::resolve(&o)?),
        Command::Variability { o } => commands::variability(&RunConfig::resolve(&o)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
