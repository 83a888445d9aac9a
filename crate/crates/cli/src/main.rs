use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

use commands::Failure;

#[derive(Parser, Debug)]
#[command(
    name = "fcds",
    version,
    about = "Document-level relation extraction over constituency and dependency syntax"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus a JSONL metric log.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Write the predicted facts of one split.
    Predict(PredictArgs),
    /// Dump the document graph of one document.
    InspectGraph(InspectArgs),
    /// Finite-difference check of every component.
    GradCheck(GradCheckArgs),
    /// Entity-pair graph distances with and without the document node.
    Stats(StatsArgs),
    /// Write a synthetic corpus split.
    GenerateSynthetic(SyntheticArgs),
}

#[derive(Args, Debug)]
pub(crate) struct CorpusArgs {
    /// Corpus directory holding relations.txt and SPLIT.{jsonl,conllu,trees}.
    #[arg(long)]
    pub(crate) corpus: PathBuf,
}

#[derive(Args, Debug)]
pub(crate) struct TrainArgs {
    #[command(flatten)]
    pub(crate) corpus: CorpusArgs,
    /// Flat key = value config file.
    #[arg(long, conflicts_with = "preset")]
    pub(crate) config: Option<PathBuf>,
    /// Named config: tiny, desk or full.
    #[arg(long, default_value = "desk")]
    pub(crate) preset: String,
    #[arg(long)]
    pub(crate) out: PathBuf,
    /// Metric log path; defaults to OUT with extension metrics.jsonl.
    #[arg(long)]
    pub(crate) log: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    pub(crate) train_split: String,
    /// Dev split scored every epoch; skipped when its files are absent.
    #[arg(long, default_value = "dev")]
    pub(crate) dev_split: String,
    #[arg(long)]
    pub(crate) quiet: bool,
}

#[derive(Args, Debug)]
pub(crate) struct EvalArgs {
    #[command(flatten)]
    pub(crate) corpus: CorpusArgs,
    #[arg(long)]
    pub(crate) ckpt: PathBuf,
    #[arg(long, default_value = "dev")]
    pub(crate) split: String,
    /// Write the report as JSON here as well.
    #[arg(long)]
    pub(crate) out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub(crate) struct PredictArgs {
    #[command(flatten)]
    pub(crate) corpus: CorpusArgs,
    #[arg(long)]
    pub(crate) ckpt: PathBuf,
    #[arg(long, default_value = "test")]
    pub(crate) split: String,
    #[arg(long)]
    pub(crate) out: PathBuf,
}

#[derive(Args, Debug)]
pub(crate) struct InspectArgs {
    #[command(flatten)]
    pub(crate) corpus: CorpusArgs,
    #[arg(long, default_value = "train")]
    pub(crate) split: String,
    /// Document id; the first document when omitted.
    #[arg(long)]
    pub(crate) doc: Option<String>,
    /// Edge weights come from this model; a fresh desk model otherwise.
    #[arg(long)]
    pub(crate) ckpt: Option<PathBuf>,
    #[arg(long)]
    pub(crate) out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub(crate) struct GradCheckArgs {
    #[arg(long)]
    pub(crate) seed: Option<u64>,
    /// Model dimensions: tiny, desk or full.
    #[arg(long, default_value = "tiny")]
    pub(crate) dims: String,
    #[arg(long)]
    pub(crate) json: bool,
}

#[derive(Args, Debug)]
pub(crate) struct StatsArgs {
    #[command(flatten)]
    pub(crate) corpus: CorpusArgs,
    #[arg(long, default_value = "train")]
    pub(crate) split: String,
    #[arg(long)]
    pub(crate) json: bool,
}

#[derive(Args, Debug)]
pub(crate) struct SyntheticArgs {
    #[arg(long)]
    pub(crate) out: PathBuf,
    #[arg(long, default_value = "train")]
    pub(crate) split: String,
    #[arg(long, default_value_t = 20)]
    pub(crate) documents: usize,
    #[arg(long, default_value_t = 4)]
    pub(crate) relations: usize,
    #[arg(long, default_value_t = 3)]
    pub(crate) min_sentences: usize,
    #[arg(long, default_value_t = 6)]
    pub(crate) max_sentences: usize,
    #[arg(long, default_value_t = 3)]
    pub(crate) min_entities: usize,
    #[arg(long, default_value_t = 5)]
    pub(crate) max_entities: usize,
    #[arg(long)]
    pub(crate) seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { Failure::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::InspectGraph(a) => commands::inspect_graph(a),
        Command::GradCheck(a) => commands::grad_check(a),
        Command::Stats(a) => commands::stats(a),
        Command::GenerateSynthetic(a) => commands::generate_synthetic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
