//! `popcorn`: data generation, training, selection, evaluation and reports.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 runtime failure.

mod commands;
mod error;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use popcorn::trainer::Strategy;

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "popcorn", version, about = "Progressive pseudo-labeling for semi-supervised segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    SynthData(SynthArgs),
    /// Train one strategy and write checkpoints and logs to the run directory.
    Train(TrainArgs),
    /// Rank unlabeled embeddings against training embeddings.
    Select(SelectArgs),
    /// Evaluate a finished run on its test set.
    Evaluate(EvaluateArgs),
    /// Compare evaluation results.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory (defaults to `data_dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Continue from the run directory's latest checkpoint.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_cycles: Option<u32>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Dataset directory (defaults to `data_dir` from the config).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory (defaults to `out_dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write zero elapsed times so logs compare byte for byte.
    #[arg(long)]
    reproducible: bool,
    /// Stop after checkpointing this cycle (0 = after initial training).
    #[arg(long, hide = true)]
    halt_after_cycle: Option<u32>,
}

#[derive(Args)]
struct SelectArgs {
    /// RAW_TENSOR `[n_u, dim]` of unlabeled embeddings.
    #[arg(long)]
    unlabeled: PathBuf,
    /// One id per line, matching the rows of `--unlabeled`.
    #[arg(long)]
    unlabeled_ids: PathBuf,
    #[arg(long)]
    training: PathBuf,
    #[arg(long)]
    training_ids: PathBuf,
    #[arg(short, long, default_value_t = 200)]
    k: usize,
    #[arg(short, long, default_value_t = 5)]
    p: usize,
    /// Output TSV (defaults to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory (defaults to the one recorded in the run config).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Row label (defaults to the strategy name).
    #[arg(long)]
    label: Option<String>,
    /// Result file (defaults to `<run>/result.json`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    results: Vec<PathBuf>,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: popcorn::Error| e.to_string())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::SynthData(a) => commands::synth_data(a),
        Command::Train(a) => train::train(a),
        Command::Select(a) => commands::select(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("popcorn: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
