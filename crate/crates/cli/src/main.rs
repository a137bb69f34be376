mod commands;
mod exit;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ovfact", version, about = "Open-vocabulary caption factuality scoring and dataset filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every caption in a dataset and write per-sample records.
    Score(ScoreArgs),
    /// Score, rank and select the top fraction of a dataset.
    Filter(FilterArgs),
    /// Agreement between human side-by-side judgments and metric scores.
    Agreement(AgreementArgs),
    /// Build or inspect a concept vocabulary.
    Vocab {
        #[command(subcommand)]
        action: VocabAction,
    },
    /// Inspect or clear a response cache directory.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

/// Flags shared by `score` and `filter`; each overrides the config file.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Input dataset (JSONL with id, image, caption, optional reference_caption).
    #[arg(long)]
    pub dataset: PathBuf,
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory with parser/detector/segmenter/embedder fixture JSONL files.
    #[arg(long)]
    pub fixtures_dir: Option<PathBuf>,
    #[arg(long)]
    pub endpoint_parser: Option<String>,
    #[arg(long)]
    pub endpoint_detector: Option<String>,
    #[arg(long)]
    pub endpoint_segmenter: Option<String>,
    #[arg(long)]
    pub endpoint_embedder: Option<String>,
    /// Ground with the detector only.
    #[arg(long)]
    pub no_segmenter: bool,
    #[arg(long)]
    pub detection_threshold: Option<f64>,
    /// Segmentation confidence threshold.
    #[arg(long)]
    pub seg_threshold: Option<f64>,
    #[arg(long, value_enum)]
    pub ref_mode: Option<RefMode>,
    /// Concept list file; repeat to take the union.
    #[arg(long = "vocab")]
    pub vocab: Vec<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Seed for the random strategy.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest tolerated fraction of failed samples.
    #[arg(long)]
    pub failure_ceiling: Option<f64>,
    /// Output file; a JSON report is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RefMode {
    GtCaption,
    Vocabulary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Ovfact,
    Chair,
    Aloha,
    OvfAlm,
}

#[derive(Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum, default_value = "ovfact")]
    pub metric: Metric,
    /// Closed vocabulary JSON (`{"classes": [...], "synonyms": {...}}`) for `--metric chair`.
    #[arg(long)]
    pub closed_vocab: Option<PathBuf>,
    /// Write per-entity grounding evidence to this JSONL file.
    #[arg(long)]
    pub dump_evidence: Option<PathBuf>,
}

#[derive(Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// ovfact_f1, ovfact_precision_only, ovfact_recall_only, ovf_alm, aloha, random or external_score.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Fraction of samples to keep, in (0, 1].
    #[arg(long)]
    pub ratio: Option<f64>,
    /// `id<TAB>value` file for the external_score strategy.
    #[arg(long)]
    pub score_file: Option<PathBuf>,
    /// Treat external scores as higher-is-better instead of lower-is-better.
    #[arg(long)]
    pub higher_is_better: bool,
    /// Also write the per-sample score records.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    Precision,
    Recall,
    Both,
}

#[derive(Args)]
pub struct AgreementArgs {
    /// JSONL judgment records.
    #[arg(long)]
    pub judgments: PathBuf,
    /// `model=path` pairs of score files written by `ovfact score`.
    #[arg(long = "scores", required = true)]
    pub scores: Vec<String>,
    #[arg(long, value_enum, default_value = "both")]
    pub axis: AxisArg,
    /// Record field compared on every axis instead of precision/recall.
    #[arg(long)]
    pub field: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum VocabAction {
    /// Union concept lists into one deduplicated, sorted list.
    Build {
        #[arg(long = "vocab", required = true)]
        vocab: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print per-source and union counts.
    Stats {
        #[arg(long = "vocab", required = true)]
        vocab: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum CacheAction {
    Stats {
        #[arg(long)]
        cache_dir: PathBuf,
    },
    Purge {
        #[arg(long)]
        cache_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score(a) => commands::score(a),
        Command::Filter(a) => commands::filter(a),
        Command::Agreement(a) => commands::agreement(a),
        Command::Vocab { action } => commands::vocab(action),
        Command::Cache { action } => commands::cache(action),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code as u8)
        }
    }
}
