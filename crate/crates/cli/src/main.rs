//! `vocab-surgeon`: batch front-end for the vocabulary adaptation pipeline.
//!
//! Exit status: 0 on success, 1 when an invariant or validation check fails,
//! 2 for unusable input (missing files, malformed documents, bad arguments).

mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use vocab_surgeon::{ErrorKind, TokenId};

use crate::config::FileConfig;

#[derive(Parser)]
#[command(name = "vocab-surgeon", version, about = "Replace-then-expand vocabulary adaptation for BPE tokenizers")]
struct Cli {
    /// TOML file with option defaults; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Maximum number of worker threads.
    #[arg(long, global = true, env = "VOCAB_SURGEON_THREADS")]
    threads: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Fields {
    Sd,
    Rs,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SplitArg {
    Random,
    OovSd,
    OovRs,
}

#[derive(Args)]
pub struct ThresholdArgs {
    /// Undertrained cutoff as a percentile of the eligible norm distribution.
    #[arg(long, conflicts_with = "absolute_threshold")]
    pub percentile: Option<f64>,
    /// Undertrained cutoff as an absolute L2 norm.
    #[arg(long)]
    pub absolute_threshold: Option<f64>,
    /// Token ids never considered for replacement (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<TokenId>,
}

#[derive(Args)]
pub struct DomainArgs {
    /// Tokenizer trained on the domain corpus.
    #[arg(long)]
    pub domain_tokenizer: Option<PathBuf>,
    /// Domain corpus (JSONL with id, sd, rs).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Corpus fields used for frequency ranking.
    #[arg(long, value_enum, default_value = "both")]
    pub fields: Fields,
    /// Maximum number of domain tokens.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Keep non-alphabetic domain tokens.
    #[arg(long)]
    pub no_refine: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a byte-level BPE tokenizer on a corpus.
    TrainDomain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        fields: Fields,
        /// Final vocabulary size, bytes included; must exceed 256.
        #[arg(long)]
        vocab_size: Option<usize>,
        /// ASCII-lowercase text before pre-tokenization.
        #[arg(long)]
        lowercase: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find unreachable and undertrained tokens safe to replace.
    FindCandidates {
        #[arg(long)]
        tokenizer: PathBuf,
        /// Input embedding matrix.
        #[arg(long)]
        embeddings: PathBuf,
        #[command(flatten)]
        threshold: ThresholdArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the domain tokenizer's tokens missing from the base vocabulary.
    BuildDomainVocab {
        #[arg(long)]
        base: PathBuf,
        #[command(flatten)]
        domain: DomainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan and apply the surgery, then initialize the new rows.
    Adapt {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        unembeddings: PathBuf,
        /// Candidate report from find-candidates; computed on the fly when absent.
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[command(flatten)]
        threshold: ThresholdArgs,
        /// Domain vocabulary from build-domain-vocab; built on the fly when absent.
        #[arg(long)]
        domain_vocab: Option<PathBuf>,
        #[command(flatten)]
        domain: DomainArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Initialize new embedding rows for an existing surgery plan.
    InitEmbeddings {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        unembeddings: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Per-document and aggregate fragmentation statistics.
    Metrics {
        #[arg(long)]
        tokenizer: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Token count at which a unigram counts as fragmented.
        #[arg(long)]
        split_threshold: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-document rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a train/test split manifest.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        /// Needed for the OOV splits.
        #[arg(long)]
        tokenizer: Option<PathBuf>,
        #[arg(long, value_enum)]
        split: SplitArg,
        #[arg(long)]
        top_frac: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        split_threshold: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for test.jsonl and train.jsonl.
        #[arg(long)]
        materialize: Option<PathBuf>,
    },
    /// Vocabulary and parameter accounting with and without replacement.
    Report {
        /// surgery_report.json written by adapt.
        #[arg(long, conflicts_with_all = ["base_vocab", "candidates", "total_new", "hidden_dim"])]
        surgery_report: Option<PathBuf>,
        #[arg(long, requires_all = ["candidates", "total_new", "hidden_dim"])]
        base_vocab: Option<usize>,
        #[arg(long)]
        candidates: Option<usize>,
        #[arg(long)]
        total_new: Option<usize>,
        #[arg(long)]
        hidden_dim: Option<usize>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

/// A check on computed output failed.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Invalid>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<vocab_surgeon::Error>() {
            return match e.kind() {
                ErrorKind::Validation => 1,
                ErrorKind::Input => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(cfg.threads) {
        if n == 0 {
            anyhow::bail!("thread count must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::TrainDomain { corpus, fields, vocab_size, lowercase, out } => {
            commands::train_domain(&cfg, &corpus, fields, vocab_size, lowercase, &out)
        }
        Command::FindCandidates { tokenizer, embeddings, threshold, out } => {
            commands::find_candidates(&cfg, &tokenizer, &embeddings, &threshold, &out)
        }
        Command::BuildDomainVocab { base, domain, out } => commands::build_domain_vocab_cmd(&cfg, &base, &domain, &out),
        Command::Adapt { base, embeddings, unembeddings, candidates, threshold, domain_vocab, domain, out_dir } => {
            commands::adapt(
                &cfg,
                &commands::AdaptInputs {
                    base: &base,
                    embeddings: &embeddings,
                    unembeddings: &unembeddings,
                    candidates: candidates.as_deref(),
                    threshold: &threshold,
                    domain_vocab: domain_vocab.as_deref(),
                    domain: &domain,
                },
                &out_dir,
            )
        }
        Command::InitEmbeddings { base, plan, embeddings, unembeddings, out_dir } => {
            commands::init_embeddings(&base, &plan, &embeddings, &unembeddings, &out_dir)
        }
        Command::Metrics { tokenizer, corpus, split_threshold, out, csv } => {
            commands::metrics(&cfg, &tokenizer, &corpus, split_threshold, &out, csv.as_deref())
        }
        Command::Split { corpus, tokenizer, split, top_frac, seed, split_threshold, out, materialize } => {
            commands::split(
                &cfg,
                &corpus,
                tokenizer.as_deref(),
                split,
                commands::SplitOptions { top_frac, seed, split_threshold },
                &out,
                materialize.as_deref(),
            )
        }
        Command::Report { surgery_report, base_vocab, candidates, total_new, hidden_dim, json } => {
            commands::report(surgery_report.as_deref(), base_vocab.zip(candidates).zip(total_new.zip(hidden_dim)), json)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
