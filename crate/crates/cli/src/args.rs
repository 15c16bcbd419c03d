use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "uem", version, about = "Event-level text-to-video retrieval")]
pub struct Cli {
    /// Worker threads; falls back to UEM_THREADS, then to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for every random choice made by the command (default 0; for
    /// synth, the spec file's seed unless given).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment one feature file into events.
    Segment(SegmentArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or score precomputed rankings.
    Eval(EvalArgs),
    /// Rank a corpus for one query feature file.
    Retrieve(RetrieveArgs),
    /// Evaluate across a grid of grouping thresholds.
    Sweep(SweepArgs),
    /// Evaluate the component and event-construction ablations.
    Ablate(AblateArgs),
    /// Generate a synthetic dataset with planted events.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// UEMF frame-feature file.
    #[arg(long)]
    pub features: PathBuf,
    /// pgvs, equal:K or kmeans:K.
    #[arg(long, default_value = "pgvs")]
    pub method: String,
    /// Grouping threshold for pgvs.
    #[arg(long, default_value_t = 0.9)]
    pub epsilon: f64,
    /// Output segmentation file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write event centers as a UEMF file.
    #[arg(long)]
    pub centers: Option<PathBuf>,
    /// Video id for the record; defaults to the file stem.
    #[arg(long)]
    pub video_id: Option<String>,
}

/// Where the data comes from.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// JSON-lines manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split file; defaults to splits.jsonl next to the manifest when present.
    #[arg(long)]
    pub splits: Option<PathBuf>,
}

/// Config file plus overrides.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` config file. Without one, feature widths come from the data.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    /// Per-epoch JSON-lines log; defaults to <checkpoint>.log.jsonl.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write the final metrics as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "rankings")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub splits: Option<PathBuf>,
    /// train, val or test; all data when omitted.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, required_unless_present = "rankings")]
    pub checkpoint: Option<PathBuf>,
    /// JSON-lines rankings to score instead of running a model.
    #[arg(long, conflicts_with_all = ["manifest", "checkpoint"])]
    pub rankings: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// UEMF word-feature file of the query.
    #[arg(long)]
    pub text_features: PathBuf,
    /// Manifest whose videos form the corpus.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// A trained checkpoint, or a freshly initialized model from config + seed.
#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated thresholds.
    #[arg(long, default_value = "-1,0.5,0.8,0.9,0.95,1.01", allow_hyphen_values = true)]
    pub grid: String,
    /// Planted segmentation file for boundary F1.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic spec; unspecified fields keep their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub feature_scale: Option<f64>,
}
