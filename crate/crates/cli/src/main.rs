//! `wpo-score`: data generation, training, sampling and evaluation of
//! WPO-informed kernel score models.
//!
//! Exit codes: 0 ok, 1 a checked property failed, 2 usage or configuration
//! error, 3 numerical abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{
    CheckArgs, CompareArgs, DatagenArgs, DensityArgs, EllipsesArgs, EvalArgs, SampleArgs, TrainArgs,
};

#[derive(Debug, Parser)]
#[command(
    name = "wpo-score",
    version,
    about = "WPO-informed kernel score models",
    args_conflicts_with_subcommands = true
)]
struct Cli {
    /// Replay a JSON run configuration instead of command-line flags.
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV.
    Datagen(DatagenArgs),
    /// Learn terminal precisions by implicit score matching.
    Train(TrainArgs),
    /// Draw samples directly or through the reverse SDE.
    Sample(SampleArgs),
    /// Evaluate a 2-D density on a grid.
    Density(DensityArgs),
    /// Export covariance ellipses of random centers.
    Ellipses(EllipsesArgs),
    /// Compute NLL, MMD² and nearest-neighbor metrics.
    Eval(EvalArgs),
    /// Compare a trained model with isotropic early-stopped KDEs.
    CompareEarlystop(CompareArgs),
    /// Run the built-in property checks.
    Check(CheckArgs),
}

/// Failure categories mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Property(String),
    Usage(anyhow::Error),
    Numerical(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        use wpo_score::Error;
        match e.downcast_ref::<Error>() {
            Some(Error::NonFinite { .. } | Error::NotSpd) => Failure::Numerical(e),
            _ => Failure::Usage(e),
        }
    }
}

impl From<wpo_score::Error> for Failure {
    fn from(e: wpo_score::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("WPO_SCORE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Failure::Usage(anyhow::anyhow!(
            "WPO_SCORE_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(e.into()))
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Datagen(a) => commands::datagen(a),
        Command::Train(a) => commands::train(a),
        Command::Sample(a) => commands::sample(a),
        Command::Density(a) => commands::density(a),
        Command::Ellipses(a) => commands::ellipses(a),
        Command::Eval(a) => commands::eval(a),
        Command::CompareEarlystop(a) => commands::compare_earlystop(a),
        Command::Check(a) => commands::check(a),
    }
}

fn parse_command() -> Result<Command, ExitCode> {
    let cli = Cli::try_parse().map_err(|e| {
        let _ = e.print();
        ExitCode::from(if e.use_stderr() { 2 } else { 0 })
    })?;
    if let Some(command) = cli.command {
        return Ok(command);
    }
    let Some(path) = cli.config else {
        eprintln!("error: a subcommand or --config is required (see --help)");
        return Err(ExitCode::from(2));
    };
    let args = std::fs::read_to_string(&path)
        .map_err(anyhow::Error::from)
        .and_then(|text| config::to_args(&text))
        .map_err(|e| {
            eprintln!("error: {}: {e:#}", path.display());
            ExitCode::from(2)
        })?;
    let replay = Cli::try_parse_from(std::iter::once("wpo-score".to_string()).chain(args))
        .map_err(|e| {
            let _ = e.print();
            ExitCode::from(2)
        })?;
    replay.command.ok_or(ExitCode::from(2))
}

fn main() -> ExitCode {
    let command = match parse_command() {
        Ok(c) => c,
        Err(code) => return code,
    };
    match configure_threads().and_then(|()| run(command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Property(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical abort: {e:#}");
            ExitCode::from(3)
        }
    }
}
