//! `timebin`: simulate, analyze and reconstruct time-bin qudit experiments.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qudit_homodyne::optics::CoherenceKernel;

use config::{ExperimentConfig, Overrides};
use error::CliError;

#[derive(Parser)]
#[command(name = "timebin", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured dephasing kernel.
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<CoherenceKernel>,
}

#[derive(Args)]
struct EventInputs {
    /// Parallel-polarization events (default: <out>/events_parallel.csv).
    parallel: Option<PathBuf>,
    /// Perpendicular reference events (default: <out>/events_perpendicular.csv).
    perpendicular: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the parallel and perpendicular event streams.
    Simulate(Common),
    /// Histograms, RCP matrix and satellite strengths from two event files.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        events: EventInputs,
    },
    /// Satellite strength against the qubit phase, with a χ² model test.
    SweepPhase {
        #[command(flatten)]
        common: Common,
        /// Comma-separated phases in radians; `pi` is understood (`0,pi/2,pi`).
        #[arg(long, default_value = "0,pi/4,pi/2,3pi/4,pi,5pi/4,3pi/2,7pi/4,2pi")]
        phases: String,
    },
    /// Density matrix and fidelity against the configured signal state.
    Tomo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        events: EventInputs,
    },
}

fn parse_kernel(s: &str) -> Result<CoherenceKernel, String> {
    s.parse().map_err(|e: qudit_homodyne::Error| e.to_string())
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let overrides = Overrides {
        seed: common.seed,
        out_dir: common.out.clone(),
        kernel: common.kernel,
    };
    ExperimentConfig::load(&common.config, &overrides)
}

fn event_paths(cfg: &ExperimentConfig, events: EventInputs) -> (PathBuf, PathBuf) {
    let (par, perp) = commands::default_event_paths(cfg);
    (events.parallel.unwrap_or(par), events.perpendicular.unwrap_or(perp))
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate(common) => commands::simulate(&load(&common)?),
        Command::Analyze { common, events } => {
            let cfg = load(&common)?;
            let (par, perp) = event_paths(&cfg, events);
            commands::analyze(&cfg, &par, &perp)
        }
        Command::SweepPhase { common, phases } => {
            let phases = commands::parse_phases(&phases)?;
            commands::sweep_phase(&load(&common)?, &phases)
        }
        Command::Tomo { common, events } => {
            let cfg = load(&common)?;
            let (par, perp) = event_paths(&cfg, events);
            commands::tomography(&cfg, &par, &perp)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage_error { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
