use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod manifest;

/// Reconstruction studies for impedance-acoustic and electrical impedance
/// tomography.
#[derive(Parser, Debug)]
#[command(name = "kvtomo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run-matrix configuration
    #[arg(long)]
    pub config: PathBuf,
    /// output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// overrides run.seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// maximum number of concurrent cells (0: one per core)
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// also write 256x256 grayscale PNGs of the reconstructions
    #[arg(long)]
    pub emit_png: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic data files for every (I, delta) cell
    Generate(Common),
    /// Run every cell and write results.csv and sigma snapshots
    Reconstruct(Common),
    /// Sample the nonlinearity conditions and write verify.json
    Verify(Common),
    /// Merge result CSVs into one formatted table
    Report {
        /// result CSVs written by `reconstruct`
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// directory for report.txt; printed only when absent
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(c) => commands::generate(&c),
        Command::Reconstruct(c) => commands::reconstruct(&c),
        Command::Verify(c) => commands::verify(&c),
        Command::Report { inputs, out } => commands::report(&inputs, out.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            commands::exit_code(&e)
        }
    }
}
