mod chat;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sedst::Error;

#[derive(Parser, Debug)]
#[command(name = "sedst", version, about = "Train and evaluate explicit dialogue state trackers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic task-oriented corpus with its knowledge base.
    GenCorpus(GenArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Decode a split and write metrics and transcripts.
    Evaluate(EvalArgs),
    /// Talk to a trained model on the terminal.
    Chat(ChatArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, env = "SEDST_OUT_DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    sessions: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    #[arg(long)]
    values_per_slot: Option<usize>,
    #[arg(long)]
    entities: Option<usize>,
    #[arg(long)]
    min_turns: Option<usize>,
    #[arg(long)]
    max_turns: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Task,
    Nontask,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Schedule {
    Constant,
    Linear,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Directory holding corpus.jsonl, kb.json and split.json.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, env = "SEDST_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Start from a saved train_config.json; other flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    /// Share of training sessions keeping gold spans (0 selects the
    /// unsupervised objective).
    #[arg(long)]
    supervision: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum)]
    lambda_schedule: Option<Schedule>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long)]
    utterance_len: Option<usize>,
    #[arg(long)]
    span_len: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Train on annotated sessions only.
    #[arg(long)]
    no_unlabeled: bool,
    /// Drop the KL term (posterior regularization ablation).
    #[arg(long)]
    no_posterior_reg: bool,
    /// Write `-` instead of elapsed seconds in the log.
    #[arg(long)]
    no_wall_clock: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SpanModeArg {
    EosTerminated,
    FixedLength,
}

#[derive(Args, Debug, Clone)]
struct DecodeArgs {
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, value_enum)]
    span_mode: Option<SpanModeArg>,
    #[arg(long)]
    span_len: Option<usize>,
    #[arg(long)]
    no_repeat: bool,
    /// Read constraints from every span token that is a known slot value.
    #[arg(long)]
    unsupervised_slot_intersection: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Valid,
    Test,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, env = "SEDST_OUT_DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Token vectors for the embedding metrics; seeded random vectors
    /// otherwise.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also exclude user turns made only of thanks keywords.
    #[arg(long)]
    keyword_thanks: bool,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args, Debug)]
struct ChatArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Knowledge base for task mode.
    #[arg(long)]
    kb: Option<PathBuf>,
    #[arg(long, env = "SEDST_OUT_DIR", default_value = "out")]
    out: PathBuf,
    /// Transcript file; defaults to chat_transcript.txt in the output
    /// directory.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    decode: DecodeArgs,
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Generation(_) => Failure::Usage(e.to_string()),
            Error::Numerical(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenCorpus(a) => commands::gen_corpus(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Chat(a) => chat::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
