mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dharq_core::analysis::Quantity;
use dharq_core::sim::{Protocol, SweepAxis};

/// Analysis heatmaps, network simulations and oracle checks for reactive
/// coded cooperation over CSMA.
#[derive(Debug, Parser)]
#[command(name = "dharq", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config overriding the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replications per run; overrides `run.replications`.
    #[arg(long, global = true)]
    reps: Option<u32>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Heatmaps of the interferer and cooperator distributions.
    Analyze {
        /// interferer, coop_minus, coop_plus or coop_avg; all when omitted.
        quantities: Vec<Quantity>,
    },
    /// Replicated runs of one or more protocols.
    Simulate {
        /// Comma-separated protocols; all when omitted.
        #[arg(long, value_delimiter = ',')]
        protocols: Vec<Protocol>,
    },
    /// Replicated runs over a parameter axis.
    Sweep {
        /// lambda (kbit/s per node), relay_cs_threshold (dBm) or delta_sd (m).
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated ascending values.
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        values: Vec<f64>,
        /// Comma-separated protocols; csma and dharq when omitted.
        #[arg(long, value_delimiter = ',')]
        protocols: Vec<Protocol>,
    },
    /// Quadrature against Monte Carlo on fixed scenarios.
    Validate {
        /// Monte Carlo draws per quantity.
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<dharq_core::Error> for Failure {
    fn from(e: dharq_core::Error) -> Self {
        use dharq_core::Error as E;
        match e {
            E::Config(_) | E::InvalidParameter(_) | E::CoincidentPositions { .. } | E::Domain { .. } => {
                Failure::Validation(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze { quantities } => commands::analyze(&cli.common, &quantities),
        Command::Simulate { protocols } => commands::simulate(&cli.common, &protocols),
        Command::Sweep { axis, values, protocols } => commands::sweep(&cli.common, axis, &values, &protocols),
        Command::Validate { samples } => commands::validate(&cli.common, samples),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
