use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;

use commands::Common;
use error::CliError;

#[derive(Parser)]
#[command(name = "exsplinet", version, about = "Spline networks: training, PINN solving and rule extraction")]
struct Cli {
    /// Worker thread cap (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Leave timestamps and wall-clock times out of reports.
    #[arg(long, global = true)]
    no_timestamp: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve a built-in Poisson problem.
    Pinn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract features and rules from a checkpoint.
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV to classify and explain, in original feature units (the
        /// checkpoint's normalization is applied).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Inner weights below this are left out of feature summaries.
        #[arg(long, default_value_t = 0.01)]
        threshold: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Tabulate the B-spline basis on a uniform grid (CSV: x, B_1..B_N).
    Basis {
        /// Number of basis functions N.
        #[arg(long = "n")]
        count: usize,
        /// Degree p.
        #[arg(long = "p")]
        degree: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Directory for basis.csv; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let common = |out: PathBuf| Common {
        out,
        no_timestamp: cli.no_timestamp,
    };
    match cli.command {
        Command::Train { ref config, ref out, seed } => commands::train(config, seed, &common(out.clone())),
        Command::Pinn { ref config, ref out, seed } => commands::pinn(config, seed, &common(out.clone())),
        Command::Interpret {
            ref checkpoint,
            ref data,
            threshold,
            ref out,
        } => commands::interpret(checkpoint, data.as_deref(), threshold, &common(out.clone())),
        Command::Basis {
            count,
            degree,
            samples,
            ref out,
        } => commands::basis(count, degree, samples, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
