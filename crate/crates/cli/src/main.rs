//! Command-line pipeline driver: validate data, pretrain, train, distill,
//! build indexes, search interactively, evaluate, and sweep student sizes.

mod commands;

use clap::{Parser, Subcommand};
use fsk_core::Error;
use std::process::ExitCode;

/// Seed used whenever the user does not pass `--seed`.
pub(crate) const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(
    name = "fsk",
    version,
    about = "Train, index, and search a hierarchical feature catalog"
)]
struct Cli {
    /// Print per-epoch losses after training steps.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a catalog file (and optionally a queryset) for problems.
    Validate(commands::ValidateArgs),
    /// Masked-token pretraining over the catalog texts.
    Pretrain(commands::PretrainArgs),
    /// Train the relevance encoder on pairs synthesized from the catalog.
    Train(commands::TrainArgs),
    /// Compress a trained encoder into a smaller student model.
    Distill(commands::DistillArgs),
    /// Distill several student sizes and tabulate the quality trade-off.
    Sweep(commands::SweepArgs),
    /// Embed every catalog entry and write the search index.
    Index(commands::IndexArgs),
    /// Query an index once with --query, or interactively without it.
    Search(commands::SearchArgs),
    /// Score search engines against a queryset and write report files.
    Eval(commands::EvalArgs),
    /// End-to-end run on the bundled catalog: vocab, train, index, eval.
    Demo(commands::DemoArgs),
}

/// 2 for unusable configuration or paths, 3 for data that fails validation,
/// 4 for numeric trouble during training.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Io { .. } => 2,
        Error::Validation(_) | Error::Format(_) | Error::Stale(_) => 3,
        Error::Numeric(_) | Error::Training { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Validate(args) => commands::validate(args),
        Command::Pretrain(args) => commands::pretrain(args, verbose),
        Command::Train(args) => commands::train(args, verbose),
        Command::Distill(args) => commands::distill(args, verbose),
        Command::Sweep(args) => commands::sweep(args),
        Command::Index(args) => commands::index(args),
        Command::Search(args) => commands::search(args),
        Command::Eval(args) => commands::eval(args),
        Command::Demo(args) => commands::demo(args, verbose),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, Error::Stale(_)) {
                eprintln!(
                    "hint: rebuild with `fsk index` so the index matches the \
                     checkpoint and vocabulary"
                );
            }
            ExitCode::from(exit_code_for(&err))
        }
    }
}
