mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use manifest::Recorder;

/// Typed-tree corpora, grammar induction, tree positional encodings and
/// grammar-constrained transformer decoding.
#[derive(Debug, Parser)]
#[command(name = "treecode", version)]
struct Cli {
    /// Run manifest path; defaults to `<primary output>.manifest.json`
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded toy corpus (JSONL)
    GenToy(GenToyArgs),
    /// Induce a grammar graph from a corpus
    Induce(InduceArgs),
    /// Check linearize/delinearize, grammar acceptance and path agreement
    Roundtrip(RoundtripArgs),
    /// Dump (token, edge path) rows as JSONL
    Paths(PathsArgs),
    /// Dump positional encoding rows of one sample as CSV
    Encode(EncodeArgs),
    /// Train the shared subword vocabulary and the AST vocabulary
    Vocab(VocabArgs),
    /// Train a model and write a checkpoint
    Train(TrainArgs),
    /// Decode natural-language inputs with beam search
    Predict(PredictArgs),
    /// Score predictions against reference trees
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenToyArgs {
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub max_statements: usize,
    #[arg(long, default_value_t = 2)]
    pub max_targets: usize,
    #[arg(long, default_value_t = 2)]
    pub max_args: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct InduceArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RoundtripArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub grammar: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub path_len: usize,
    /// Optional JSON report with per-sample failures
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PathsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub path_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EncodeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Zero-based record index
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    #[arg(long, default_value = "tree")]
    pub positional: String,
    #[arg(long, default_value_t = 8)]
    pub d_idx: usize,
    #[arg(long, default_value_t = 8)]
    pub path_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct VocabArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Upper bound on the subword vocabulary size
    #[arg(long, default_value_t = 2000)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Output checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "tree")]
    pub positional: String,
    #[arg(long, default_value_t = 8)]
    pub d_idx: usize,
    #[arg(long, default_value_t = 8)]
    pub path_len: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 2)]
    pub encoder_layers: usize,
    #[arg(long, default_value_t = 2)]
    pub decoder_layers: usize,
    #[arg(long, default_value_t = 128)]
    pub ffn_dim: usize,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 15)]
    pub batch_size: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// Corpus whose `nl` fields are decoded
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub grammar: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub beams: usize,
    #[arg(long, default_value_t = 250)]
    pub max_len: usize,
    /// Restrict every expansion to grammar-legal tokens
    #[arg(long)]
    pub constrained: bool,
    /// Expected positional mode; must match the checkpoint
    #[arg(long)]
    pub positional: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    /// Predictions JSONL as written by `predict`
    #[arg(long)]
    pub predictions: PathBuf,
    /// Reference corpus
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSON report; a text table goes to `<out>.txt`
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mask_literals: bool,
}

/// Why a command stopped, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Io(anyhow::Error),
    Verification(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Io(_) => 2,
            Failure::Verification(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(e) => write!(f, "invalid input: {e:#}"),
            Failure::Io(e) => write!(f, "i/o error: {e:#}"),
            Failure::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

fn describe(command: &Command) -> (&'static str, serde_json::Value, Option<u64>, Option<PathBuf>) {
    match command {
        Command::GenToy(a) => ("gen-toy", snapshot(a), Some(a.seed), Some(a.out.clone())),
        Command::Induce(a) => ("induce", snapshot(a), None, Some(a.out.clone())),
        Command::Roundtrip(a) => ("roundtrip", snapshot(a), None, a.out.clone()),
        Command::Paths(a) => ("paths", snapshot(a), None, Some(a.out.clone())),
        Command::Encode(a) => ("encode", snapshot(a), None, Some(a.out.clone())),
        Command::Vocab(a) => ("vocab", snapshot(a), None, Some(a.out.clone())),
        Command::Train(a) => ("train", snapshot(a), Some(a.seed), Some(a.checkpoint.clone())),
        Command::Predict(a) => ("predict", snapshot(a), None, Some(a.out.clone())),
        Command::Evaluate(a) => ("evaluate", snapshot(a), None, Some(a.out.clone())),
    }
}

fn snapshot<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (name, config, seed, primary) = describe(&cli.command);
    let manifest_path = cli
        .manifest
        .clone()
        .unwrap_or_else(|| manifest::default_path(primary.as_deref(), name));
    let mut rec = Recorder::new(name, config, seed);

    let result = match &cli.command {
        Command::GenToy(a) => commands::gen_toy(a, &mut rec),
        Command::Induce(a) => commands::induce(a, &mut rec),
        Command::Roundtrip(a) => commands::roundtrip(a, &mut rec),
        Command::Paths(a) => commands::paths(a, &mut rec),
        Command::Encode(a) => commands::encode(a, &mut rec),
        Command::Vocab(a) => commands::vocab(a, &mut rec),
        Command::Train(a) => commands::train(a, &mut rec),
        Command::Predict(a) => commands::predict(a, &mut rec),
        Command::Evaluate(a) => commands::evaluate(a, &mut rec),
    };

    let (status, code) = match &result {
        Ok(()) => ("ok".to_string(), 0),
        Err(f) => (f.to_string(), f.code()),
    };
    if let Err(f) = &result {
        eprintln!("treecode {name}: {f}");
    }
    let manifest = rec.finish(status, code);
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    if let Err(e) = std::fs::write(&manifest_path, body + "\n") {
        eprintln!("treecode {name}: cannot write manifest {}: {e}", manifest_path.display());
        if code == 0 {
            return ExitCode::from(2);
        }
    }
    ExitCode::from(code)
}
