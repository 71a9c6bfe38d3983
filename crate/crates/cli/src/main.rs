use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use treeloc_cli::{main_with, CliError, Overrides};

/// Spectral and localization analysis of random radial trees.
#[derive(Parser, Debug)]
#[command(name = "treeloc", version)]
struct Args {
    /// JSON run configuration.
    config: PathBuf,
    /// Override the command seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    out: Option<String>,
    /// Override the energy range.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    range: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))
        .and_then(|text| {
            let overrides = Overrides {
                seed: args.seed,
                out: args.out,
                range: args.range.map(|r| [r[0], r[1]]),
            };
            main_with(&text, &overrides)
        });
    match result {
        Ok((cfg, csv)) => {
            if cfg.output.is_none() {
                print!("{csv}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("treeloc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
