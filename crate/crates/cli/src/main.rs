use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use ctmdp_cli::config::parse_config;
use ctmdp_cli::runner::run;

/// Batch front end for the discounted-CTMDP toolkit. The command (solve,
/// simulate, verify, example) comes from the [run] section of the config.
#[derive(Parser)]
#[command(name = "ctmdp", version)]
struct Args {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,

    /// Override the seed from the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the output directory from the config.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override the tolerance from the config.
    #[arg(long)]
    tol: Option<f64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut config = match parse_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: config: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.out = out;
    }
    if let Some(tol) = args.tol {
        if !(tol > 0.0) {
            eprintln!("error: --tol must be positive");
            return ExitCode::from(1);
        }
        config.tol = tol;
    }

    match run(&config) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for artifact in &outcome.artifacts {
                println!("wrote {}", artifact.display());
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
