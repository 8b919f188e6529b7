//! `qasum` command-line interface.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that failed while doing the work; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl From<qasum::Error> for CliError {
    fn from(e: qasum::Error) -> Self {
        match e {
            qasum::Error::Config(_) | qasum::Error::ConfigHash { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qasum", version, about = "Extractive summarization trained with question-answering rewards")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fill in missing entity and root annotations with simple heuristics.
    Prep(PrepArgs),
    /// Print the Cloze questions generated for a split.
    Genq(GenqArgs),
    /// Pretrain the extraction policy on bigram labels.
    Pretrain(RunArgs),
    /// Train with the composite reward, starting from the pretrained checkpoint if present.
    Train(TrainArgs),
    /// Greedy-decode summaries as JSON Lines.
    Summarize(SummarizeArgs),
    /// Score greedy summaries with ROUGE and QA accuracy.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct PrepArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Args)]
struct GenqArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "train")]
    split: Split,
    /// Write here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides QASUM_SEED and the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides QASUM_SEED and the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Start from this checkpoint instead of `<checkpoint_dir>/pretrained.json`.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SummarizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Write here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = qasum::corpus::DEFAULT_MAX_INPUT_LEN)]
    max_input_len: usize,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = qasum::corpus::DEFAULT_MAX_INPUT_LEN)]
    max_input_len: usize,
    /// Apply light suffix stemming before ROUGE.
    #[arg(long)]
    stem: bool,
    /// Drop common English stopwords before ROUGE.
    #[arg(long)]
    remove_stopwords: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Prep(a) => commands::prep(&a.input, &a.output),
        Command::Genq(a) => commands::genq(&a.config, a.split, a.seed, a.output.as_deref()),
        Command::Pretrain(a) => commands::pretrain(&a.config, a.seed),
        Command::Train(a) => commands::train(&a.run.config, a.run.seed, a.init.as_deref()),
        Command::Summarize(a) => commands::summarize(&a.checkpoint, &a.input, a.output.as_deref(), a.max_input_len),
        Command::Eval(a) => commands::eval(
            &a.checkpoint,
            &a.input,
            a.report.as_deref(),
            a.max_input_len,
            qasum::metrics::RougeOptions {
                remove_stopwords: a.remove_stopwords,
                stem: a.stem,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_env("QASUM_LOG")
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Runtime(_) => 1,
            })
        }
    }
}
