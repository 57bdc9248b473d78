// SPDX-License-Identifier: Apache-2.0

//! `dncplace` command-line runner.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dncplace", version, about = "Reinforcement-learning FPGA placement")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed (and seed list).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Parallel independent runs for `decompose`.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Instance {
    /// Netlist file; overrides the config.
    #[arg(long)]
    pub netlist: Option<PathBuf>,
    /// Architecture file; overrides the config.
    #[arg(long)]
    pub arch: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineKind {
    Random,
    Greedy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// 56 CLBs and 174 IOs on a 24x24 board.
    Tseng,
    /// 22 CLBs and 8 IOs on a 7x7 board.
    Small,
    /// Four CLBs on a 4x4 board.
    Toy,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one agent on the whole instance.
    Train {
        #[command(flatten)]
        instance: Instance,
        /// Overrides `ppo.episodes_total`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run the decomposition schedule for each configured setting and seed.
    Decompose {
        #[command(flatten)]
        instance: Instance,
    },
    /// Place with a non-learning baseline.
    Baseline {
        #[command(flatten)]
        instance: Instance,
        #[arg(long, value_enum)]
        kind: BaselineKind,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
    /// Write a synthetic netlist and architecture.
    Gen {
        #[arg(long, value_enum, default_value = "small")]
        preset: Preset,
    },
    /// Decode a trained checkpoint greedily and write the placement.
    ExportPlace {
        #[command(flatten)]
        instance: Instance,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Write the observation channels for one block as CSV grids.
    DumpState {
        #[command(flatten)]
        instance: Instance,
        /// Partial placement to start from.
        #[arg(long)]
        place: Option<PathBuf>,
        /// Block name; defaults to the first unplaced block in placement order.
        #[arg(long)]
        block: Option<String>,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or input files: exit 2.
    Usage(anyhow::Error),
    /// Anything that goes wrong while running: exit 1.
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PLACE_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
