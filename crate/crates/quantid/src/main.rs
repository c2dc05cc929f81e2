use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use quantid::commands::{cmd_diagnose, cmd_fit, cmd_simulate};
use quantid::config::load_config;

/// Online identification from quantized observations.
#[derive(Parser)]
#[command(name = "quantid", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories against a known ground truth and write metrics.
    Simulate {
        /// Path to the JSON run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Number of consecutive seeds to sweep, starting at the config seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Output directory for metrics CSVs and summaries.
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream a labeled CSV dataset through the configured estimator.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Dataset with a `f1,...,fd,label` header.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run Monte-Carlo oracle checks at the configured model.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        /// Larger samples, tighter bounds.
        #[arg(long)]
        strict: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Simulate { config, seeds, out } => {
            let config = load_config(&config).context("loading config")?;
            let outcome = cmd_simulate(&config, seeds, &out)?;
            log::info!(
                "wrote {} metric file(s) under {}",
                outcome.metrics_paths.len(),
                out.display()
            );
            Ok(true)
        }
        Command::Fit { config, data, out } => {
            let config = load_config(&config).context("loading config")?;
            let (_, summary) = cmd_fit(&config, &data, &out)?;
            println!(
                "fit {} rows, final accuracy {:.4}",
                summary.steps, summary.final_accuracy
            );
            Ok(true)
        }
        Command::Diagnose { config, strict } => {
            let config = load_config(&config).context("loading config")?;
            let report = cmd_diagnose(&config, strict)?;
            Ok(report.all_passed())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
