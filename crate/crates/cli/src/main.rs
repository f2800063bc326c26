//! Command-line driver: ingestion, training, screening, retrieval, answering, evaluation.

mod artifacts;
mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use evirefine::pipeline::Split;

/// Failure caused by the invocation or its inputs rather than by the computation.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Parser, Debug)]
#[command(name = "evirefine", version, about = "Progressive evidence refinement for multi-hop retrieval")]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for models and outputs; overrides `model_dir`.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Select evidence from screening scores alone, without the refiner.
    #[arg(long, global = true)]
    pub eism_only: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a corpus file and print a per-modality summary.
    Ingest {
        input: PathBuf,
        /// Write the normalized corpus here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one stage.
    Train {
        #[arg(value_enum)]
        stage: Stage,
    },
    /// Screen every question of a split and cache the rankings.
    Screen(SplitArg),
    /// Screen and refine every question of a split; writes retrievals and a report.
    Retrieve(SplitArg),
    /// Answer every question of a split from its retrieved evidence.
    Answer(SplitArg),
    /// Score prediction files (retrievals and/or answers) against the corpus.
    Eval {
        #[arg(required = true)]
        predictions: Vec<PathBuf>,
        /// Reference corpus; defaults to the configured one.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Write a synthetic planted corpus.
    GenSynth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct SplitArg {
    #[arg(long, value_enum, default_value = "eval")]
    pub split: SplitName,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2500)]
    pub n_instances: usize,
    #[arg(long, default_value_t = 50)]
    pub pool_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub bridge_fraction: f64,
    #[arg(long, default_value_t = 2000)]
    pub vocab_size: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Screener,
    Refiner,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Eval,
    All,
}

impl From<SplitName> for Split {
    fn from(s: SplitName) -> Split {
        match s {
            SplitName::Train => Split::Train,
            SplitName::Eval => Split::Eval,
            SplitName::All => Split::All,
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use evirefine::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Parse { .. }
                | E::DuplicateId(_)
                | E::ImageWithoutCaption(_)
                | E::DanglingId { .. }
                | E::InvalidCorpus(_)
                | E::InvalidArgument(_)
                | E::InsufficientInstances { .. }
                | E::EmptyPool
                | E::EmptyGold
                | E::VocabularyTooSmall(_)
                | E::ModelFormat(_)
                | E::File { .. }
                | E::Json(_)
                | E::Csv(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
