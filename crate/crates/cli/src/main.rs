//! `sarcasm`: prepare data, train embeddings and classifiers, evaluate,
//! predict and run gradient checks.
//!
//! Exit status is 0 on success, 1 for usage errors and 2 for runtime
//! failures. Failures print a single `error: <kind>: <message>` line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sarcasm_core::embed::EmbedVariant;
use sarcasm_core::models::Architecture;

#[derive(Debug, Parser)]
#[command(name = "sarcasm", version, about = "Sarcasm detection in code-mixed tweets")]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Clean and tokenize a labeled corpus and build its vocabulary.
    Prep {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory for cleaned.jsonl and vocab.tsv.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated search hashtags to strip (without '#').
        #[arg(long, value_delimiter = ',')]
        tags: Option<Vec<String>>,
        #[arg(long, default_value_t = sarcasm_core::corpus::DEFAULT_MIN_COUNT)]
        min_count: u64,
        /// Print label counts.
        #[arg(long)]
        stats: bool,
    },
    /// Train word embeddings on the unlabeled corpus.
    Embed {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        variant: Variant,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads. More than one is fast but not reproducible.
        #[arg(long)]
        workers: Option<usize>,
        /// Output file (default: <output_dir>/embeddings/<variant>.txt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nearest neighbours of a word by cosine similarity.
    Nn {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        word: String,
        #[arg(short, default_value_t = 10)]
        k: usize,
    },
    /// Train one classifier and evaluate its best checkpoint on the test split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        arch: Option<Arch>,
        #[arg(long, value_enum, default_value = "word2vec")]
        variant: Variant,
        /// Embedding file (default: <output_dir>/embeddings/<variant>.txt).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Keep only the best epoch checkpoint.
        #[arg(long)]
        keep_best: bool,
    },
    /// Evaluate a checkpoint on a labeled file; prints JSON metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Probability that a tweet is sarcastic.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Finite-difference gradient check of the full models.
    Gradcheck {
        /// Architecture to check (default: all five).
        #[arg(long, value_enum)]
        arch: Option<Arch>,
        #[arg(long, value_enum, default_value = "small")]
        scale: Scale,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Accuracy grid from result files found under a directory.
    Report {
        #[arg(long)]
        results_dir: PathBuf,
        #[arg(long)]
        csv: bool,
    },
    /// Write the synthetic keyword-planted toy corpus.
    Toy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = commands::TOY_SEED)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Variant {
    Word2vec,
    Fasttext,
}

impl From<Variant> for EmbedVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::Word2vec => EmbedVariant::Word2vec,
            Variant::Fasttext => EmbedVariant::Fasttext,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Arch {
    SeriesCnn,
    ParallelCnn,
    Lstm,
    Bilstm,
    AttnBilstm,
}

impl From<Arch> for Architecture {
    fn from(a: Arch) -> Self {
        match a {
            Arch::SeriesCnn => Architecture::SeriesCnn,
            Arch::ParallelCnn => Architecture::ParallelCnn,
            Arch::Lstm => Architecture::Lstm,
            Arch::Bilstm => Architecture::Bilstm,
            Arch::AttnBilstm => Architecture::AttnBilstm,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Scale {
    /// max_len 8, 8 units, 8 filters, two examples.
    Small,
}

fn run(cli: Cli) -> sarcasm_core::Result<()> {
    match cli.command {
        Command::Prep {
            input,
            out,
            tags,
            min_count,
            stats,
        } => commands::prep(&input, &out, tags, min_count, stats),
        Command::Embed {
            config,
            variant,
            seed,
            workers,
            out,
        } => commands::embed(&config, variant.into(), seed, workers, out),
        Command::Nn { embeddings, word, k } => commands::nn(&embeddings, &word, k),
        Command::Train {
            config,
            arch,
            variant,
            embeddings,
            keep_best,
        } => commands::train(&config, arch.map(Into::into), variant.into(), embeddings, keep_best),
        Command::Eval { checkpoint, test } => commands::eval(&checkpoint, &test),
        Command::Predict { checkpoint, text } => commands::predict(&checkpoint, &text),
        Command::Gradcheck {
            arch,
            scale: Scale::Small,
            seed,
            tolerance,
        } => commands::gradcheck(arch.map(Into::into), seed, tolerance),
        Command::Report { results_dir, csv } => commands::report(&results_dir, csv),
        Command::Toy { out, n, seed } => commands::toy(&out, n, seed),
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
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(2)
        }
    }
}
