mod analyze;
mod bench;
mod dataset;
mod eval;
mod inputs;
mod manifest;
mod train;

use std::process::ExitCode;

use bagnet::parallel::{with_workers, workers_from_env};
use bagnet::Error;
use clap::{Parser, Subcommand};

/// Bag-of-local-features networks: datasets, training, evaluation and analyses.
#[derive(Debug, Parser)]
#[command(name = "bagnet", version)]
struct Cli {
    /// Worker threads; defaults to $BAGNET_WORKERS, then 1.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create, convert and inspect dataset files.
    #[command(subcommand)]
    Dataset(dataset::DatasetCommand),
    /// Train a BagNet and write metrics plus a checkpoint.
    Train(train::TrainArgs),
    /// Top-k accuracy of a checkpoint on a dataset.
    Eval(eval::EvalArgs),
    /// Interpretability analyses of a trained checkpoint.
    #[command(subcommand)]
    Analyze(analyze::AnalyzeCommand),
    /// Forward-pass throughput.
    Bench(bench::BenchArgs),
}

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Io(_) => 1,
        Error::Format(_) => 3,
        Error::Precondition(_) => 4,
        Error::Divergence { .. } | Error::NonFinite { .. } => 5,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cli.workers.unwrap_or_else(workers_from_env);
    if workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(2);
    }
    let outcome = with_workers(workers, || match cli.command {
        Command::Dataset(cmd) => dataset::run(cmd, workers),
        Command::Train(args) => train::run(args, workers),
        Command::Eval(args) => eval::run(args, workers),
        Command::Analyze(cmd) => analyze::run(cmd, workers),
        Command::Bench(args) => bench::run(args),
    })
    .and_then(|r| r);
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
