mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Cross-lingual retrieval-augmented claim verification pipeline.
#[derive(Debug, Parser)]
#[command(name = "xict", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendArg {
    Dense,
    Bm25,
    Translate,
}

/// Evidence retrieval settings shared by every command that retrieves.
#[derive(Debug, Args, Serialize)]
pub struct RetrievalArgs {
    /// Passage file (JSONL).
    #[arg(long)]
    pub passages: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendArg::Dense)]
    pub backend: BackendArg,
    /// Encoder checkpoint, required by the dense and translate backends.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Prebuilt dense index; verified against the encoder.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Translation lexicon, required by the translate backend.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Passages retrieved per claim.
    #[arg(long)]
    pub k: Option<usize>,
    /// Retrieve only passages in this language.
    #[arg(long)]
    pub language_filter: Option<String>,
    /// Drop passages in this language before retrieval.
    #[arg(long)]
    pub ablate_language: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split articles into passages.
    Ingest {
        #[arg(long)]
        articles: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic multilingual corpus, lexicon and claims.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Build translated-title pseudo-query pairs.
    XictGen {
        #[arg(long)]
        articles: PathBuf,
        #[arg(long)]
        passages: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the two-tower retriever.
    TrainRetriever {
        #[arg(long)]
        articles: PathBuf,
        #[arg(long)]
        passages: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        /// Fixed pair file; without it pairs are resampled every epoch.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Encode passages into a dense index.
    Index {
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        passages: PathBuf,
        #[arg(long)]
        ablate_language: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Retrieve evidence for claims.
    Retrieve {
        #[arg(long)]
        claims: PathBuf,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Train the verdict reader on retrieved evidence.
    TrainReader {
        #[arg(long)]
        claims: PathBuf,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Predict verdicts.
    Predict {
        #[arg(long)]
        claims: PathBuf,
        #[arg(long)]
        reader: PathBuf,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions against gold labels.
    Eval {
        #[arg(long)]
        claims: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Average F1 over all seven labels instead of the gold-present ones.
        #[arg(long)]
        all_classes: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Language-ablation or monolingual-versus-cross-lingual study.
    Study {
        #[arg(long, value_enum)]
        kind: StudyKind,
        #[arg(long)]
        train_claims: PathBuf,
        #[arg(long)]
        eval_claims: PathBuf,
        /// Language distance file; adds a distance/delta correlation report.
        #[arg(long)]
        distances: Option<PathBuf>,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Ablation,
    MonoVsCross,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest { articles, common } => commands::ingest(&articles, &common),
        Command::Synth { common } => commands::synth(&common),
        Command::XictGen {
            articles,
            passages,
            lexicon,
            common,
        } => commands::xict_gen(&articles, &passages, &lexicon, &common),
        Command::TrainRetriever {
            articles,
            passages,
            lexicon,
            pairs,
            common,
        } => commands::train_retriever(&articles, &passages, &lexicon, pairs.as_deref(), &common),
        Command::Index {
            encoder,
            passages,
            ablate_language,
            common,
        } => commands::index(&encoder, &passages, ablate_language.as_deref(), &common),
        Command::Retrieve {
            claims,
            retrieval,
            common,
        } => commands::retrieve(&claims, &retrieval, &common),
        Command::TrainReader {
            claims,
            retrieval,
            common,
        } => commands::train_reader(&claims, &retrieval, &common),
        Command::Predict {
            claims,
            reader,
            retrieval,
            common,
        } => commands::predict(&claims, &reader, &retrieval, &common),
        Command::Eval {
            claims,
            predictions,
            all_classes,
            common,
        } => commands::eval(&claims, &predictions, all_classes, &common),
        Command::Study {
            kind,
            train_claims,
            eval_claims,
            distances,
            retrieval,
            common,
        } => commands::study(
            kind,
            &train_claims,
            &eval_claims,
            distances.as_deref(),
            &retrieval,
            &common,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("xict: {e:#}");
            ExitCode::FAILURE
        }
    }
}
