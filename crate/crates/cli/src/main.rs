//! `depthscale`: sweeps, hidden-state diagnostics and scaling fits.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 non-identifiable fit.

mod diagnose;
mod scaling;
mod sweep;
mod tables;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "depthscale", version, about = "Depth-scaling laboratory for residual networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a grid of teacher-student runs (resumable).
    TrainSweep(sweep::TrainSweepArgs),
    /// Angle statistics, summaries and trajectory clusters.
    Diagnose(diagnose::DiagnoseArgs),
    /// Decomposed power-law fit of a (m, ell, D, loss) table.
    FitScaling(scaling::FitScalingArgs),
    /// Depth exponent per temperature from a sweep directory.
    FitToy(sweep::FitToyArgs),
    /// Depth exponent at every evaluation step.
    AlphaCurve(sweep::AlphaCurveArgs),
    /// Print the header of an angle dump.
    DumpInfo(DumpInfoArgs),
}

#[derive(Args)]
struct DumpInfoArgs {
    file: PathBuf,
}

/// Bad flag combinations that clap cannot express.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<depthscale::Error>() {
            return match e {
                depthscale::Error::NotIdentifiable(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::TrainSweep(a) => sweep::train_sweep(a),
        Command::Diagnose(a) => diagnose::diagnose(a),
        Command::FitScaling(a) => scaling::fit_scaling(a),
        Command::FitToy(a) => sweep::fit_toy(a),
        Command::AlphaCurve(a) => sweep::alpha_curve(a),
        Command::DumpInfo(a) => diagnose::dump_info(&a.file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
