use std::path::PathBuf;

use ccml_core::dataset::LabelColumn;
use ccml_core::{
    CcknnMode, CcknnOptions, GradientMode, InitKind, InitSpec, Learner, PcaMode, PipelineConfig, PreprocessConfig,
    Priors, TrainConfig, Variant,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "ccml", version, about = "Class-conditional metric learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the Sandwich dataset of interleaved class strips.
    Synth(SynthArgs),
    /// Split a dataset into train/test files or cross-validation folds.
    Split(SplitArgs),
    /// Fit preprocessing and a metric, and write a model file.
    Train(TrainArgs),
    /// Report KNN and CCKNN error rates of a model.
    Eval(EvalArgs),
    /// Dump nearest neighbours and the nDCG retrieval curve.
    Retrieve(RetrieveArgs),
    /// Write embedded coordinates for plotting.
    Embed(EmbedArgs),
    /// Train one model per hyperparameter grid point and summarize.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Strips per class.
    #[arg(long, default_value_t = 3)]
    pub strips: usize,
    #[arg(long, default_value_t = 50)]
    pub per_strip: usize,
    /// Standard deviation of the vertical jitter.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Mean horizontal gap between consecutive points of a strip.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset CSV.
    pub data: PathBuf,
    /// Label column: a header name, a 0-based index, or "last".
    #[arg(long, default_value = "last")]
    pub label_column: LabelColumn,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    /// Write this many cross-validation folds instead of one holdout split.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub no_stratify: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitArg {
    Identity,
    Gaussian,
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum VariantArg {
    AllClasses,
    CorrectClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum GradientArg {
    Full,
    QueryOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum CcknnModeArg {
    SumSquared,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorsArg {
    Uniform,
    Frequency,
}

/// `--pca 0.99` keeps a variance fraction, `--pca 5` a component count.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum PcaArg {
    Count(usize),
    Fraction(f64),
}

impl std::str::FromStr for PcaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Ok(n) = s.parse::<usize>() {
            return Ok(PcaArg::Count(n));
        }
        s.parse::<f64>()
            .map(PcaArg::Fraction)
            .map_err(|_| format!("expected a variance fraction or component count, got '{s}'"))
    }
}

impl From<PcaArg> for PcaMode {
    fn from(p: PcaArg) -> Self {
        match p {
            PcaArg::Count(n) => PcaMode::FixedComponents(n),
            PcaArg::Fraction(f) => PcaMode::RetainVariance(f),
        }
    }
}

fn parse_learner(s: &str) -> std::result::Result<Learner, String> {
    s.parse().map_err(|e: ccml_core::Error| e.to_string())
}

/// Training settings settable by flag or config file; flags win.
///
/// Config files are TOML with the flag names as keys, e.g. `k = 3`,
/// `learner = "ccml-local"`, `pca = 0.99`.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainOptions {
    /// ccml, ccml-local, nca or identity.
    #[arg(long, value_parser = parse_learner)]
    pub learner: Option<Learner>,
    /// Neighbours per class.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub gradient_mode: Option<GradientArg>,
    /// Standardize features before PCA and training (default true).
    #[arg(long)]
    pub standardize: Option<bool>,
    /// PCA before training: a variance fraction (0.99) or component count.
    #[arg(long)]
    pub pca: Option<PcaArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Projected dimension; defaults to the preprocessed dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub init: Option<InitArg>,
    /// Entry standard deviation for gaussian initialization.
    #[arg(long)]
    pub init_sd: Option<f64>,
    /// Seeds both initialization and mini-batch sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Neighbours used by the decision rules; defaults to k.
    #[arg(long)]
    pub decision_k: Option<usize>,
    #[arg(long)]
    pub ccknn_mode: Option<CcknnModeArg>,
    #[arg(long)]
    pub priors: Option<PriorsArg>,
}

impl TrainOptions {
    /// Fills every unset field from `fallback`.
    pub fn or(self, fallback: TrainOptions) -> TrainOptions {
        TrainOptions {
            learner: self.learner.or(fallback.learner),
            k: self.k.or(fallback.k),
            variant: self.variant.or(fallback.variant),
            gradient_mode: self.gradient_mode.or(fallback.gradient_mode),
            standardize: self.standardize.or(fallback.standardize),
            pca: self.pca.or(fallback.pca),
            epochs: self.epochs.or(fallback.epochs),
            lr: self.lr.or(fallback.lr),
            batch_size: self.batch_size.or(fallback.batch_size),
            weight_decay: self.weight_decay.or(fallback.weight_decay),
            dim: self.dim.or(fallback.dim),
            init: self.init.or(fallback.init),
            init_sd: self.init_sd.or(fallback.init_sd),
            seed: self.seed.or(fallback.seed),
            log_every: self.log_every.or(fallback.log_every),
            decision_k: self.decision_k.or(fallback.decision_k),
            ccknn_mode: self.ccknn_mode.or(fallback.ccknn_mode),
            priors: self.priors.or(fallback.priors),
        }
    }

    pub fn from_toml_file(path: &std::path::Path) -> Result<TrainOptions> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(toml::from_str(&text)?)
    }

    pub fn to_pipeline(&self) -> Result<PipelineConfig> {
        let d = TrainConfig::default();
        let seed = self.seed.unwrap_or(d.seed);
        let kind = match (self.init, self.init_sd) {
            (Some(InitArg::Identity), None) => InitKind::IdentityTruncated,
            (Some(InitArg::Pca), None) => InitKind::PcaSeeded,
            (Some(InitArg::Gaussian) | None, sd) => InitKind::ScaledGaussian { sd },
            (Some(_), Some(_)) => {
                return Err(CliError::Usage("--init-sd only applies to gaussian initialization".into()))
            }
        };
        let ccknn_mode = match self.ccknn_mode {
            Some(CcknnModeArg::Gaussian) => CcknnMode::Gaussian,
            _ => CcknnMode::SumSquared,
        };
        // Gaussian scoring is a posterior, so it weighs classes by frequency
        // unless told otherwise; the sum-of-squares rule stays a pure argmin.
        let priors = match (self.priors, ccknn_mode) {
            (Some(PriorsArg::Uniform), _) => Priors::Uniform,
            (Some(PriorsArg::Frequency), _) => Priors::Frequency,
            (None, CcknnMode::Gaussian) => Priors::Frequency,
            (None, CcknnMode::SumSquared) => Priors::Uniform,
        };
        Ok(PipelineConfig {
            learner: self.learner.unwrap_or(Learner::Ccml),
            preprocess: PreprocessConfig {
                standardize: self.standardize.unwrap_or(true),
                pca: self.pca.map(PcaMode::from),
            },
            output_dim: self.dim,
            train: TrainConfig {
                k: self.k.unwrap_or(d.k),
                variant: match self.variant {
                    Some(VariantArg::CorrectClass) => Variant::CorrectClass,
                    _ => Variant::AllClasses,
                },
                gradient_mode: match self.gradient_mode {
                    Some(GradientArg::QueryOnly) => GradientMode::QueryOnly,
                    _ => GradientMode::Full,
                },
                learning_rate: self.lr.unwrap_or(d.learning_rate),
                epochs: self.epochs.unwrap_or(d.epochs),
                batch_size: self.batch_size.unwrap_or(d.batch_size),
                weight_decay: self.weight_decay.unwrap_or(d.weight_decay),
                output_dim: self.dim.unwrap_or(d.output_dim),
                init: InitSpec { kind, seed },
                seed,
                log_every: self.log_every.unwrap_or(d.log_every),
            },
            decision_k: self.decision_k,
            ccknn: CcknnOptions {
                mode: ccknn_mode,
                priors,
            },
        })
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[command(flatten)]
    pub options: TrainOptions,
    /// TOML settings file, or an existing model file whose recorded
    /// configuration is reused.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Write the training trace CSV here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Euclidean,
}

#[derive(Debug, Args)]
pub struct RuleArgs {
    /// Neighbours for both rules; defaults to the model's setting.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub ccknn_mode: Option<CcknnModeArg>,
    #[arg(long)]
    pub priors: Option<PriorsArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Test CSV, or the full dataset with --cv.
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Reference (training) CSV whose points vote.
    #[arg(long, required_unless_present = "cv")]
    pub train: Option<PathBuf>,
    #[command(flatten)]
    pub rules: RuleArgs,
    /// Also evaluate the identity metric on the same preprocessed features.
    #[arg(long)]
    pub baseline: Option<Baseline>,
    /// Re-run the model's recorded configuration under N-fold
    /// cross-validation of the input data.
    #[arg(long)]
    pub cv: Option<usize>,
    /// Seed of the cross-validation folds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Machine-readable error table.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-query predictions and CCKNN scores.
    #[arg(long, conflicts_with = "cv")]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Query CSV.
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Reference CSV searched for neighbours.
    #[arg(long)]
    pub reference: PathBuf,
    /// Neighbours listed per query.
    #[arg(long, default_value_t = 5)]
    pub top: usize,
    /// Retrieval depths, as `a:b` or a comma list.
    #[arg(long, default_value = "1:10")]
    pub k_grid: String,
    #[arg(long)]
    pub neighbors: Option<PathBuf>,
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub input: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: DataArgs,
    /// Base settings as in `train`; grid values override them.
    #[command(flatten)]
    pub options: TrainOptions,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub grid_k: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub grid_lr: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub grid_weight_decay: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub grid_dim: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub grid_batch_size: Vec<usize>,
    /// Fraction of rows held out for validation.
    #[arg(long, default_value_t = 0.3)]
    pub validation_fraction: f64,
    /// Seed of the validation split.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parses `a:b` (inclusive) or `a,b,c`.
pub fn parse_k_grid(s: &str) -> Result<Vec<usize>> {
    let bad = || CliError::Usage(format!("invalid k grid '{s}'"));
    let grid: Vec<usize> = if let Some((a, b)) = s.split_once(':') {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if grid.is_empty() || grid.contains(&0) {
        return Err(bad());
    }
    Ok(grid)
}
