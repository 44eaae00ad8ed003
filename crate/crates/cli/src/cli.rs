use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::io::{Format, LabelCol, ReadOptions};

#[derive(Debug, Parser)]
#[command(name = "certmetric", version, about = "Metric learning with certified adversarial margins")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a metric and write a model file plus a training trace.
    Train(TrainArgs),
    /// kNN accuracy of a model on a test set.
    Eval(EvalArgs),
    /// Adversarial margins of the training triplets and the bound diagnostic.
    Margin(MarginArgs),
    /// kNN accuracy under additive Gaussian noise at several SNRs.
    NoiseBench(NoiseBenchArgs),
    /// Random hyperparameter search with stratified cross-validation.
    Search(SearchArgs),
    /// Write a synthetic dataset.
    Toy(ToyArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ReadArgs {
    /// Input file format.
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// CSV files start directly with data.
    #[arg(long)]
    pub no_header: bool,
    /// CSV label column, by zero-based index or by header name.
    #[arg(long, default_value = "0")]
    pub label_col: LabelCol,
    /// libsvm feature count (default: largest index present).
    #[arg(long)]
    pub features: Option<usize>,
}

impl ReadArgs {
    pub fn options(&self) -> ReadOptions {
        ReadOptions {
            format: self.format,
            header: !self.no_header,
            label_col: self.label_col.clone(),
            features: self.features,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Lmnn,
    LmnnCr,
    Scml,
    ScmlCr,
}

impl Method {
    pub fn is_scml(self) -> bool {
        matches!(self, Method::Scml | Method::ScmlCr)
    }

    pub fn is_robust(self) -> bool {
        matches!(self, Method::LmnnCr | Method::ScmlCr)
    }

    pub fn plain(self) -> Method {
        if self.is_scml() {
            Method::Scml
        } else {
            Method::Lmnn
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Lmnn => "lmnn",
            Method::LmnnCr => "lmnn-cr",
            Method::Scml => "scml",
            Method::ScmlCr => "scml-cr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PreprocessingArg {
    None,
    Standardize,
    Full,
}

impl From<PreprocessingArg> for certmetric::Preprocessing {
    fn from(p: PreprocessingArg) -> Self {
        match p {
            PreprocessingArg::None => certmetric::Preprocessing::None,
            PreprocessingArg::Standardize => certmetric::Preprocessing::Standardize,
            PreprocessingArg::Full => certmetric::Preprocessing::Full,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct NeighborArgs {
    /// Same-class target neighbors per instance.
    #[arg(long, default_value_t = 3)]
    pub k_targets: usize,
    /// Impostors per target pair.
    #[arg(long, default_value_t = 10)]
    pub k_impostors: usize,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizerArgs {
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// Relative objective change that counts as converged.
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ScmlArgs {
    /// L1 weight on the basis weights.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Number of rank-one bases.
    #[arg(long)]
    pub k_bases: Option<usize>,
    /// Local regions used to generate bases.
    #[arg(long)]
    pub regions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub read: ReadArgs,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long, value_enum, default_value = "full")]
    pub preprocessing: PreprocessingArg,
    /// Keep the leading principal directions explaining this variance share.
    #[arg(long)]
    pub pca_variance: Option<f64>,
    /// Push weight of the LMNN loss, in (0, 1).
    #[arg(long)]
    pub mu: Option<f64>,
    /// Target margin (default: half the 90th percentile of Euclidean margins).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Perturbation-loss weight (default: 2 / tau²).
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = certmetric::robustness::DEFAULT_EPSILON)]
    pub epsilon: f64,
    #[command(flatten)]
    pub neighbors: NeighborArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    #[command(flatten)]
    pub scml: ScmlArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Trace CSV (default: model path with extension `trace.csv`).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Reference set the neighbors come from.
    #[arg(long)]
    pub train: PathBuf,
    /// Query set (default: the training set).
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub read: ReadArgs,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Per-instance predictions CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MarginArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset whose triplets are measured, normally the training set.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub read: ReadArgs,
    /// Threshold for the count of large margins (default: the model's tau).
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Upper bound on the loss in the generalization bound.
    #[arg(long, default_value_t = 1.0)]
    pub b_const: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Target neighbors (default: as in training).
    #[arg(long)]
    pub k_targets: Option<usize>,
    /// Impostors (default: as in training).
    #[arg(long)]
    pub k_impostors: Option<usize>,
    /// Writes PREFIX.margins.csv, PREFIX.hist.csv and PREFIX.summary.txt.
    #[arg(long)]
    pub out_prefix: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NoiseBenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[command(flatten)]
    pub read: ReadArgs,
    /// SNR levels in dB.
    #[arg(long, value_delimiter = ',', default_value = "20,10,5,1", allow_negative_numbers = true)]
    pub snr: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "spherical,diagonal")]
    pub kind: Vec<NoiseKindArg>,
    /// Test-set size after resampling with replacement.
    #[arg(long, default_value_t = 10_000)]
    pub augment_to: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Results CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseKindArg {
    Spherical,
    Diagonal,
}

impl NoiseKindArg {
    pub fn kind(self) -> certmetric::NoiseKind {
        match self {
            NoiseKindArg::Spherical => certmetric::NoiseKind::Spherical,
            NoiseKindArg::Diagonal => certmetric::NoiseKind::Diagonal,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseKindArg::Spherical => "spherical",
            NoiseKindArg::Diagonal => "diagonal",
        }
    }
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub read: ReadArgs,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long, value_enum, default_value = "full")]
    pub preprocessing: PreprocessingArg,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Neighbors used to score each fold.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[command(flatten)]
    pub neighbors: NeighborArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    #[command(flatten)]
    pub scml: ScmlArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trial table CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ToyKind {
    TwoGaussians,
    TwoBands,
    Multicollinear,
    Blobs,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long, value_enum)]
    pub kind: ToyKind,
    /// Instances per class (default depends on the toy).
    #[arg(long)]
    pub n_per_class: Option<usize>,
    /// Feature count of the blobs toy.
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, value_enum, default_value = "none")]
    pub preprocessing: PreprocessingArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub out_format: Format,
}
