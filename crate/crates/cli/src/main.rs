use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfband::simgen::ScenarioSpec;
use mfband_cli::bundle::ModelBundle;
use mfband_cli::commands;
use mfband_cli::{CliError, Result};

/// Conformal prediction bands for multivariate functional responses.
#[derive(Parser)]
#[command(name = "mfband", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit, modulate and calibrate, then write a model bundle.
    Calibrate {
        #[arg(long)]
        curves: PathBuf,
        /// Covariate files, scalar or functional; repeatable.
        #[arg(long)]
        covariates: Vec<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict and write bands for new covariates.
    Band {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        covariates: Vec<PathBuf>,
        /// Clamp predictions and bands at zero.
        #[arg(long)]
        truncate_at_zero: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run Monte Carlo studies.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        table: Option<PathBuf>,
        /// Worker threads; defaults to MFBAND_THREADS or all cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write one simulated sample as CSV.
    Generate {
        #[arg(long)]
        study: u8,
        #[arg(long)]
        scenario: u8,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        coef_seed: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        grid_points: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Calibrate { curves, covariates, config, out } => {
            let (bundle, summary) = commands::calibrate(&curves, &covariates, &config)?;
            bundle.save(&out)?;
            println!("{summary}");
        }
        Cmd::Band { bundle, covariates, truncate_at_zero, out } => {
            let bundle = ModelBundle::load(&bundle)?;
            let bands = commands::band(&bundle, &covariates, truncate_at_zero)?;
            commands::write_band(&out, bundle.predictor.grid(), &bands)?;
        }
        Cmd::Study { config, report, table, threads } => {
            if threads == Some(0) {
                return Err(CliError::Numeric("--threads must be positive".into()));
            }
            let threads = match threads {
                Some(t) => Some(t),
                None => commands::threads_from_env()?,
            };
            let reports = commands::study(&config, threads)?;
            std::fs::write(&report, commands::report_json(&reports)?).map_err(|e| CliError::io(&report, e))?;
            if let Some(table) = table {
                commands::write_table(&table, &reports)?;
            }
        }
        Cmd::Generate { study, scenario, n, coef_seed, seed, grid_points, out_dir } => {
            let mut spec = ScenarioSpec::new(study, scenario, n, coef_seed);
            spec.grid_points = grid_points;
            commands::generate(spec, seed, &out_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
