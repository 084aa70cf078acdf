//! Thin CLI over the library: `run` executes a scenario and writes its
//! outputs, `validate` checks one without running. Exit codes: 0 for a
//! clean run, 1 when the run completed but saw incidents or corrupted
//! payloads, 2 for usage and configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qkdsim::scenario::Scenario;
use qkdsim::sim::Simulation;

#[derive(Parser)]
#[command(name = "qkdsim", version, about = "Simulate QKD-secured links at the key-management layer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace, CSV, and PCAP outputs.
    Run {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write all outputs into this directory, keeping file names.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Parse and validate a scenario without running it.
    Validate {
        /// Scenario TOML file.
        scenario: PathBuf,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { scenario, seed, out_dir } => run(scenario, seed, out_dir),
        Command::Validate { scenario } => validate(scenario),
    }
}

fn run(path: PathBuf, seed: Option<u64>, out_dir: Option<PathBuf>) -> ExitCode {
    let mut scenario = match Scenario::from_path(&path) {
        Ok(scenario) => scenario,
        Err(err) => return usage_error(err),
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    if let Some(dir) = &out_dir {
        scenario.redirect_outputs(dir);
    }
    let mut simulation = match Simulation::from_scenario(&scenario) {
        Ok(simulation) => simulation,
        Err(err) => return usage_error(err),
    };
    match simulation.run() {
        Ok(report) => {
            println!("{report}");
            println!(
                "wrote {}, {}, {}",
                scenario.outputs.trace.display(),
                scenario.outputs.csv.display(),
                scenario.outputs.pcap.display()
            );
            if report.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => usage_error(err),
    }
}

fn validate(path: PathBuf) -> ExitCode {
    match Scenario::from_path(&path) {
        Ok(scenario) => {
            println!(
                "{}: ok ({} <-> {}, seed {}, duration {})",
                path.display(),
                scenario.nodes[0].name,
                scenario.nodes[1].name,
                scenario.seed,
                scenario.duration
            );
            ExitCode::SUCCESS
        }
        Err(err) => usage_error(err),
    }
}

fn usage_error(err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(2)
}
