//! `rankaug` command line.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! validation errors.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Bad flags, bad config or unusable input files.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser, Debug)]
#[command(name = "rankaug", version, about = "Extractive augmentation and contrastive losses for re-ranking")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// JSON config for the command
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the config
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Segment a corpus and write its statistics
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: Option<PathBuf>,
    },
    /// Double a triples file with extractive summaries
    Augment(AugmentArgs),
    /// Train a linear or attention sentence selector
    TrainSelector(SelectorArgs),
    /// Train a ranker from a JSON config
    Train {
        /// Pick lambda and tau on a held-out split before training
        #[arg(long)]
        tune: bool,
    },
    /// Re-rank a run with a trained checkpoint
    Rerank {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "reranked.run")]
        out: String,
    },
    /// nDCG@k of a run, optionally against a baseline run
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences
    Gradcheck {
        /// Triples taken from the first batch
        #[arg(long, default_value_t = 4)]
        triples: usize,
    },
    /// Markdown table over eval reports
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "report.md")]
        out: String,
    },
    /// BM25 first-stage run
    Retrieve {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value = "bm25.run")]
        out: String,
    },
    /// Write a synthetic corpus with planted relevance
    Synth {
        /// Candidates per query in the BM25 runs
        #[arg(long, default_value_t = 20)]
        top_k: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScorerArg {
    Bm25,
    Embedding,
    Linear,
    Attention,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// One `qid<TAB>posdoc<TAB>negdoc` per line
    #[arg(long)]
    pub triples: PathBuf,
    /// Relevant documents are kept out of the augmented negatives
    #[arg(long)]
    pub qrels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bm25")]
    pub scorer: ScorerArg,
    #[arg(long, default_value_t = 3)]
    pub k_a: usize,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub selector: Option<PathBuf>,
    #[arg(long, default_value = "augmented.tsv")]
    pub out: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Linear,
    Attention,
}

#[derive(Args, Debug)]
pub struct SelectorArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    /// Negatives come from the highest-ranked non-relevant candidate
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value = "selector.ckpt")]
    pub out: String,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub qrels: PathBuf,
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, default_value_t = rankaug::evaluation::DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub size: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, default_value = "eval.json")]
    pub out: String,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<rankaug::Error>() {
            return match e {
                rankaug::Error::Io { .. } | rankaug::Error::Format { .. } | rankaug::Error::InvalidConfig(_) => 2,
                _ => 1,
            };
        }
    }
    1
}

/// The error chain joined with ": ", skipping causes an outer message
/// already quotes.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
