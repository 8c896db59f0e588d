use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stvc::io_cli::{self, RunConfig, SimulateOptions};
use stvc::select::SelectionConfig;
use stvc::synth::ModelChoice;
use stvc::Result;

#[derive(Parser)]
#[command(name = "stvc", version, about = "Spatio-temporally varying coefficient regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model described by a TOML config.
    Fit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run replicates of a synthetic scenario and append RMSE results.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 1)]
        replicates: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Results file to append to.
        #[arg(long, default_value = "results.csv")]
        output: PathBuf,
        /// Comma-separated structures to fit; `true` fits the generating structure.
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
    },
    /// Build the bases of a configured dataset and report them.
    Basis {
        #[arg(long)]
        config: PathBuf,
        /// Also write eigenvalues and eigenvectors to the output directory.
        #[arg(long)]
        inspect: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { config } => {
            let cfg = RunConfig::load(&config)?;
            let report = io_cli::run_fit(&cfg)?;
            io_cli::print_fit_summary(io::stdout().lock(), &report)
        }
        Command::Simulate {
            scenario,
            replicates,
            seed,
            output,
            models,
        } => {
            let models = if models.is_empty() {
                ModelChoice::all()
            } else {
                models.iter().map(|m| ModelChoice::parse(m)).collect::<Result<_>>()?
            };
            let opts = SimulateOptions {
                scenario,
                replicates,
                seed,
                output,
                models,
                selection: SelectionConfig::default(),
            };
            let rows = io_cli::run_simulate(&opts)?;
            io_cli::write_rmse_summary(io::stdout().lock(), &rows)
        }
        Command::Basis { config, inspect } => {
            let cfg = RunConfig::load(&config)?;
            io_cli::run_basis(&cfg, inspect, io::stdout().lock()).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
