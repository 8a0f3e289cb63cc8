use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "kdlnet",
    version,
    about = "Kronecker dual-layer networks: train, decompose, analyze, benchmark"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic regression samples to CSV.
    GenData(GenDataArgs),
    /// Train a network with a fixed architecture.
    Train(TrainArgs),
    /// Train a KDL network that grows its rank on validation plateaus.
    TrainAdaptive(AdaptiveArgs),
    /// Kronecker decomposition of one dense layer of a checkpoint.
    Decompose(DecomposeArgs),
    /// Evaluate the truncation error bound of a dense checkpoint.
    Bound(BoundArgs),
    /// Test error of truncated KDL embeddings of a dense checkpoint.
    RankSweep(RankSweepArgs),
    /// Run a benchmark described by a TOML file.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n1: usize,
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training data: a CSV file, or IDX images when `--labels` is given.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// IDX label file paired with `--data` images.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// 0-based target columns of a CSV file; defaults to the last column.
    #[arg(long, value_delimiter = ',')]
    pub target_cols: Vec<usize>,
    #[arg(long)]
    pub skip_header: bool,
    /// Separate test set (CSV, or IDX images with `--test-labels`).
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    /// Fraction held out for testing when no test set is given.
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    /// Use only the first N training rows.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Input normalization fitted on the training rows: none, minmax, zscore.
    #[arg(long, default_value = "none")]
    pub normalize: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Architecture, e.g. "8|64|64|1" or "(2,4)|(8,8)|(8,8)|(1,1)".
    #[arg(long)]
    pub arch: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    /// sgd or adam
    #[arg(long, default_value = "adam")]
    pub optimizer: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "tanh")]
    pub phi1: String,
    #[arg(long, default_value = "tanh")]
    pub phi2: String,
    /// Output-layer activation; defaults to `--phi1`.
    #[arg(long)]
    pub phi_out: Option<String>,
    /// activate-each or activate-sum
    #[arg(long, default_value = "activate-each")]
    pub combine: String,
    /// mse, rel_l2_pct, or class_err_pct
    #[arg(long, default_value = "rel_l2_pct")]
    pub metric: String,
    #[arg(long)]
    pub no_shuffle: bool,
    #[arg(long)]
    pub out_model: Option<PathBuf>,
    #[arg(long)]
    pub out_history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AdaptiveArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 4)]
    pub max_rank: usize,
    #[arg(long, default_value_t = 5)]
    pub plateau_window: usize,
    #[arg(long, default_value_t = 0.01)]
    pub plateau_tol: f64,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.63,1.26,2.0")]
    pub lr_factors: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub probe_epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// m1,n1,m2,n2
    #[arg(long)]
    pub shape: String,
    #[arg(long)]
    pub rank: usize,
    /// 0-based dense layer index.
    #[arg(long, default_value_t = 0)]
    pub layer: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// KDL architecture string or `m1,n1,m2,n2;...` per layer.
    #[arg(long)]
    pub shapes: String,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    /// CSV file whose first numeric row is the input.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankSweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub shapes: String,
    #[arg(long)]
    pub test_data: PathBuf,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub target_cols: Vec<usize>,
    #[arg(long)]
    pub skip_header: bool,
    /// Ranks to evaluate; defaults to every rank up to full.
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    #[arg(long, default_value = "linear")]
    pub phi2: String,
    #[arg(long, default_value = "rel_l2_pct")]
    pub metric: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Report file; format from `--format` or the extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// csv, json, or markdown
    #[arg(long)]
    pub format: Option<String>,
}
