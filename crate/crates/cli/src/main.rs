//! `edgefl`: profile training cost, solve mask budgets, fit device
//! parameters, simulate fleets and tabulate experiment logs.

mod error;
mod profile;
mod report;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "edgefl", version, about = "Resource-aware federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-layer and total workload, memory and time, plus a keep-fraction sweep.
    Profile {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Smallest mask budget that meets the device's time, memory and workload limits.
    Budget {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Least-squares fit of device bandwidths and overhead from measured cycles.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// CSV with columns spec-id,keep-fraction,observed-seconds,observed-bytes.
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one fleet experiment into a fresh run directory.
    Simulate {
        #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
        config: Option<PathBuf>,
        /// Re-run the experiment recorded in a manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Parent of the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, conflicts_with = "manifest")]
        seed: Option<u64>,
        #[arg(long, conflicts_with = "manifest")]
        scheme: Option<String>,
        #[arg(long, conflicts_with = "manifest")]
        threads: Option<usize>,
    },
    /// Align accuracy-vs-time series from several logs and tabulate them.
    Report {
        #[arg(required = true, num_args = 1..)]
        logs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Accuracy levels for the time-to-threshold table.
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.6, 0.7, 0.8, 0.9, 0.95])]
        thresholds: Vec<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Profile { config, out } => profile::profile(&config, &out),
        Command::Budget { config, out } => profile::budget(&config, &out),
        Command::Fit { config, measurements, out } => profile::fit(&config, &measurements, &out),
        Command::Simulate { config, manifest, out, seed, scheme, threads } => match (config, manifest) {
            (_, Some(m)) => simulate::rerun(&m, out.as_deref()),
            (Some(c), None) => {
                simulate::simulate(&c, out.as_deref(), simulate::Overrides { seed, scheme, threads })
            }
            (None, None) => Err(CliError::config("either --config or --manifest is required")),
        },
        Command::Report { logs, out, thresholds } => report::report(&logs, &out, &thresholds),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
