//! Command-line pipeline around the multivariate eGPD library: simulation,
//! fitting (staged likelihood-moment or amortized neural), estimator
//! training, diagnostics, and precipitation ingestion.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or fit error,
//! 4 training divergence.

mod commands;

use clap::{Parser, Subcommand};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "megpd",
    version,
    about = "Multivariate extended generalized Pareto modeling"
)]
struct Cli {
    /// Worker threads for simulation, bootstrap and training pipelines
    /// (default: MEGPD_THREADS or all cores). Outputs are identical for any
    /// value; 1 forces sequential execution.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from the model and write it as CSV plus manifest.
    Simulate(commands::SimulateArgs),
    /// Fit the six model parameters to a dataset CSV.
    Fit(commands::FitArgs),
    /// Train an ensemble of neural estimators on simulated data.
    Train(commands::TrainArgs),
    /// Tail-dependence and QQ diagnostics with bootstrap bands.
    Diagnose(commands::DiagnoseArgs),
    /// Join two station precipitation files into a model-ready dataset.
    Ingest(commands::IngestArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("MEGPD_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("megpd: failed to configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Fit(args) => commands::fit(args),
        Command::Train(args) => commands::train(args),
        Command::Diagnose(args) => commands::diagnose(args),
        Command::Ingest(args) => commands::ingest(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("megpd: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
