use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mrshift", version, about = "Multiply robust estimation under local distribution shift")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Flat `key = value` file supplying any flag of the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw the synthetic local covariate shift data set.
    Simulate(SimulateArgs),
    /// Cluster training segments by the MMD between their joint samples.
    Cluster(ClusterArgs),
    /// Fit an estimator and write the model and a fit report.
    Fit(FitArgs),
    /// Predict with a fitted model.
    Predict(PredictArgs),
    /// Score a fitted model on labeled data, per segment.
    Evaluate(EvaluateArgs),
    /// Select boosting hyperparameters by k-fold cross-validation.
    Cv(CvArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 20)]
    pub segments: usize,
    #[arg(long, default_value_t = 10_000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 2_000)]
    pub n_test: usize,
    /// One coefficient for all segments or a comma-separated list, one per segment.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub gamma: Vec<f64>,
    #[arg(long, default_value_t = 0.3)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving train.csv and test.csv.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Training file and its column roles.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// regression, binary or multiclass:K
    #[arg(long, default_value = "regression")]
    pub task: String,
    #[arg(long, default_value = "y")]
    pub label_col: String,
    #[arg(long, default_value = "__segment__")]
    pub segment_col: String,
    #[arg(long)]
    pub group_col: Option<String>,
    /// Columns to one-hot encode even when numeric.
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Cluster count; chosen automatically when absent.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub min_cluster_size: usize,
    #[arg(long, default_value_t = 2000)]
    pub max_per_segment: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "clusters.json")]
    pub out: PathBuf,
}

/// Estimator settings shared by `fit` and `cv`.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// mr, dr, dr-sf or gbt
    #[arg(long, default_value = "mr")]
    pub method: String,
    /// covariate or label
    #[arg(long, default_value = "covariate")]
    pub shift: String,
    /// discriminative, kmm, bbse or none; defaults to discriminative for
    /// covariate shift and bbse for label shift.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, default_value_t = 10.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.8)]
    pub varsigma: f64,
    /// auto, a cluster count, or explicit clusters such as `s01,s02;s03`.
    #[arg(long, default_value = "auto")]
    pub clusters: String,
    #[arg(long, default_value_t = 2)]
    pub min_cluster_size: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub ball: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub intercept: bool,
    #[arg(long, default_value_t = 1e6)]
    pub lambda_max: f64,
    #[arg(long)]
    pub base_trees: Option<usize>,
    #[arg(long)]
    pub base_depth: Option<usize>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub base_subsample: Option<f64>,
    #[arg(long)]
    pub global_trees: Option<usize>,
    #[arg(long)]
    pub global_depth: Option<usize>,
    #[arg(long)]
    pub global_lr: Option<f64>,
    #[arg(long)]
    pub refine_trees: Option<usize>,
    #[arg(long)]
    pub refine_depth: Option<usize>,
    #[arg(long)]
    pub refine_lr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Test features (labels, if present, are ignored).
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    #[arg(long, default_value = "fit_report.json")]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Features to predict; the label column is not required.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "predictions.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled evaluation data.
    #[arg(long)]
    pub data: PathBuf,
    /// Model whose loss divides the reported values.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// mse, ce or brier; mse for regression and ce otherwise by default.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// JSON grid with `base` and `refine` lists; the full default grid when absent.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value = "cv.json")]
    pub out: PathBuf,
}
