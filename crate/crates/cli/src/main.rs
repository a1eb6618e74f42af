// SPDX-License-Identifier: MIT OR Apache-2.0

use clap::{Parser, Subcommand};
use renewcp_cli::commands;
use renewcp_cli::config::RunConfig;
use renewcp_cli::CliResult;
use std::path::PathBuf;
use std::process::ExitCode;

/// Online Bayesian changepoint detection with renewal segment priors.
#[derive(Parser)]
#[command(name = "renewcp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (flat `key = value` file).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides filter.max_particles; `inf` runs exact inference.
    #[arg(long)]
    max_particles: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a series and write the posterior reports.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Report directory.
        #[arg(long)]
        output: PathBuf,
    },
    /// Draw a synthetic series and its ground truth.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Data file to write; `truth.json` goes next to it.
        #[arg(long)]
        output: PathBuf,
        /// Series length (overrides simulate.n).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Exact posterior by enumeration (at most 16 dates).
    Exact {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Also run the exact filter and print the largest deviations.
        #[arg(long)]
        compare: bool,
    },
    /// Detection followed by the configured risk query.
    Risk {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Optional report directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(k) = &common.max_particles {
        commands::override_max_particles(&mut cfg, k)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Detect { common, input, output } => {
            let cfg = load(&common)?;
            commands::detect(&cfg, &input, &output)?;
        }
        Command::Simulate { common, output, n } => {
            let cfg = load(&common)?;
            commands::simulate_cmd(&cfg, n, &output)?;
        }
        Command::Exact { common, input, compare } => {
            let cfg = load(&common)?;
            let (report, _) = commands::exact(&cfg, &input, compare)?;
            print!("{report}");
        }
        Command::Risk { common, input, output } => {
            let cfg = load(&common)?;
            commands::risk(&cfg, &input, output.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("renewcp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
