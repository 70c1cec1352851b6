//! Command-line experiment runner for condition-number regularized kriging.

mod config;
mod experiments;
mod model_cmd;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::{CommonArgs, ExperimentConfig};
use model_cmd::FitRequest;

#[derive(Debug, Parser)]
#[command(name = "krigreg", version, about = "Kriging with condition-number kernel regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Regularize each training set and write its normalized convergence trace.
    Convergence(CommonArgs),
    /// Fit with the starting theta and with the regularized theta, and write
    /// surfaces, error fields and reports for both.
    Compare(CommonArgs),
    /// Fit a model to a points CSV and save it as JSON.
    Fit {
        /// CSV with a header row; last column is the value.
        #[arg(long)]
        points: PathBuf,
        /// Domain box as `lo:hi,lo:hi`. Defaults to the points' bounding box.
        #[arg(long, conflicts_with = "function")]
        domain: Option<String>,
        /// Run the regularizer instead of using theta0 directly.
        #[arg(long)]
        regularize: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a saved model at queries given as `x1,x2`.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(allow_hyphen_values = true)]
        queries: Vec<String>,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Convergence(args) => Ok(experiments::convergence(&ExperimentConfig::resolve(&args)?) == 0),
        Command::Compare(args) => Ok(experiments::compare(&ExperimentConfig::resolve(&args)?) == 0),
        Command::Fit { points, domain, regularize, out, common } => {
            let config = ExperimentConfig::resolve(&common)?;
            let domain = match (domain, &common.function) {
                (Some(spec), _) => Some(model_cmd::parse_domain(&spec)?),
                (None, Some(_)) => match config.functions[..] {
                    [f] => Some(f.domain()),
                    _ => anyhow::bail!("--function for fit must name a single function"),
                },
                (None, None) => None,
            };
            model_cmd::fit(&FitRequest { points: &points, domain, regularize, out: &out }, &config)?;
            Ok(true)
        }
        Command::Predict { model, queries } => {
            model_cmd::predict(&model, &queries, &mut std::io::stdout().lock())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
