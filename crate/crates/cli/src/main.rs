//! `refscreen`: generate a corpus, train on a reference set, score, run the
//! Isolation Forest baseline, evaluate, and repeat with resampled references.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use refscreen::Pooling;

/// Exit statuses.
pub mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const TRAINING: u8 = 3;
    pub const PARTIAL: u8 = 4;
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Training(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Data(_) => exit::DATA,
            CliError::Training(_) => exit::TRAINING,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Training(m) => f.write_str(m),
        }
    }
}

impl From<refscreen::Error> for CliError {
    fn from(e: refscreen::Error) -> Self {
        if e.is_training_failure() {
            CliError::Training(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "refscreen", version, about = "Screen image-volume datasets for bad items against a reference set")]
pub struct Cli {
    /// Worker threads for scoring, corpus generation and forest building (0 = all cores).
    /// Outputs are identical for every value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// TOML file with one table per subcommand; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic corpus and its manifest.csv.
    Gen(GenArgs),
    /// Train the Siamese embedder on a reference set.
    Train(TrainArgs),
    /// Score every manifest entry by mean distance to the references.
    Score(ScoreArgs),
    /// Isolation Forest baseline scores.
    Baseline(BaselineArgs),
    /// AUC, sensitivity and specificity of a scores file.
    Eval(EvalArgs),
    /// Repeat train+score with independently sampled reference sets.
    Stability(StabilityArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory [required]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Corpus seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Number of good volumes [default: 220]
    #[arg(long)]
    good: Option<usize>,
    /// Bad volumes per corruption kind [default: 5]
    #[arg(long)]
    bad_per_kind: Option<usize>,
    /// Slices per volume [default: 4]
    #[arg(long)]
    slices: Option<usize>,
    /// Slice height and width in pixels [default: 64]
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest [required]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// File of reference ids, one per line (overrides --ref-size/--ref-seed)
    #[arg(long)]
    ref_ids: Option<PathBuf>,
    /// Number of good entries sampled as references [default: 20]
    #[arg(long)]
    ref_size: Option<usize>,
    /// Seed for sampling the references [default: 0]
    #[arg(long)]
    ref_seed: Option<u64>,
    /// Training epochs [default: 6]
    #[arg(long)]
    epochs: Option<usize>,
    /// SGD learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// SGD momentum [default: 0]
    #[arg(long)]
    momentum: Option<f64>,
    /// Contrastive margin for dissimilar pairs [default: 1.0]
    #[arg(long)]
    margin: Option<f64>,
    /// Slice pooling: mean_slices | mid_slice [default: mean_slices]
    #[arg(long)]
    pooling: Option<Pooling>,
    /// Network initialisation and pair-shuffle seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Input size the volumes are resized to [default: 64]
    #[arg(long)]
    size: Option<usize>,
    /// Output weights file; MODEL.refs, MODEL.report.txt and MODEL.config.toml are written alongside [required]
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Weights file from `train` [required]
    #[arg(long)]
    model: Option<PathBuf>,
    /// Reference id list [default: MODEL.refs]
    #[arg(long)]
    refs: Option<PathBuf>,
    /// Dataset manifest [required]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Slice pooling; must match training [default: mean_slices]
    #[arg(long)]
    pooling: Option<Pooling>,
    /// Scores CSV [default: scores.csv]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// Dataset manifest [required]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of isolation trees [default: 100]
    #[arg(long)]
    trees: Option<usize>,
    /// Subsample size per tree, clamped to the dataset size [default: 256]
    #[arg(long)]
    subsample: Option<usize>,
    /// Feature grid: the mid slice is mean-pooled to GRID×GRID [default: 16]
    #[arg(long)]
    grid: Option<usize>,
    /// Forest seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Input size the volumes are resized to [default: 64]
    #[arg(long)]
    size: Option<usize>,
    /// Scores CSV (the med column holds the anomaly score) [default: baseline.csv]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Scores CSV from `score` or `baseline` [required]
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Manifest holding the labels [required]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Ids to leave out, e.g. the reference list
    #[arg(long)]
    exclude: Option<PathBuf>,
    /// Method name written to the report [default: siamese_med]
    #[arg(long)]
    method: Option<String>,
    /// flagged (use the scores' flagged column) | youden | a numeric threshold [default: flagged]
    #[arg(long)]
    threshold: Option<String>,
    /// Report file [default: report.txt]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional ROC curve SVG
    #[arg(long)]
    roc: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    /// Dataset manifest [required]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of runs [default: 5]
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run r uses a seed derived from (seed, r) [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Reference set size [default: 20]
    #[arg(long)]
    ref_size: Option<usize>,
    /// Training epochs [default: 6]
    #[arg(long)]
    epochs: Option<usize>,
    /// SGD learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Slice pooling [default: mean_slices]
    #[arg(long)]
    pooling: Option<Pooling>,
    /// Input size [default: 64]
    #[arg(long)]
    size: Option<usize>,
    /// Summary file [default: stability.txt]
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<u8, CliError> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", cli.threads)))?;
    }
    let config = cli.config.as_deref();
    match cli.command {
        Command::Gen(a) => commands::gen(a, config),
        Command::Train(a) => commands::train(a, config),
        Command::Score(a) => commands::score(a, config),
        Command::Baseline(a) => commands::baseline(a, config),
        Command::Eval(a) => commands::eval(a, config),
        Command::Stability(a) => commands::stability(a, config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
