use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use betalink_cli::commands::{cmd_diagnose, cmd_fit, cmd_marginal, cmd_simulate, exit_code};
use clap::{Parser, Subcommand};

/// Beta regression with parametric links for mean and dispersion.
///
/// Exit status: 0 on success, 2 for invalid input, 3 when estimation did not
/// converge.
#[derive(Parser)]
#[command(name = "betalink", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write parameter, summary and per-observation tables.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Residual, envelope and influence plot data plus RESET and link tests.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// model.json written by `fit`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        envelope_k: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Monte Carlo study of the estimators for each scenario in a file.
    Simulate {
        /// JSON scenario file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Overrides the seed of every scenario.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Marginal impact of one mean covariate on the fitted mean.
    Marginal {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        covariate: String,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { config, data, out_dir } => {
            let fitted = cmd_fit(&config, &data, &out_dir)?;
            println!(
                "converged in {} iterations, loglik {:.6}; results in {}",
                fitted.iterations,
                fitted.loglik,
                out_dir.display()
            );
        }
        Command::Diagnose { config, data, model, out_dir, envelope_k, alpha, seed } => {
            cmd_diagnose(&config, &data, &model, envelope_k, alpha, seed, &out_dir)?;
            println!("diagnostics written to {}", out_dir.display());
        }
        Command::Simulate { config, out_dir, seed } => {
            cmd_simulate(&config, seed, &out_dir)?;
            println!("summaries written to {}", out_dir.display());
        }
        Command::Marginal { config, data, model, covariate, out_dir } => {
            cmd_marginal(&config, &data, &model, &covariate, &out_dir)?;
            println!("marginal impacts written to {}", out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
