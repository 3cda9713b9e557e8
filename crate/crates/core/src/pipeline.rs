//! End-to-end experiment plumbing: preprocessing, metric learning and
//! decision-rule evaluation, including k-fold cross-validation against the
//! Euclidean baseline on the same preprocessed features.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccml::{self, TrainConfig, TrainTrace, Variant};
use crate::classify::{ccknn_classify, knn_classify, CcknnOptions};
use crate::dataset::{split, LabeledDataset, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::error_rate;
use crate::metric::{Embedding, LinearMetric};
use crate::nca;
use crate::preprocess::{PreprocessConfig, Preprocessor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Learner {
    Ccml,
    /// CCML with the correct-class objective.
    CcmlLocal,
    Nca,
    /// No learning; the identity metric on the preprocessed features.
    Identity,
}

impl std::str::FromStr for Learner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ccml" => Ok(Learner::Ccml),
            "ccml-local" => Ok(Learner::CcmlLocal),
            "nca" => Ok(Learner::Nca),
            "identity" | "euclidean" => Ok(Learner::Identity),
            other => Err(Error::Config(format!("unknown learner '{other}'"))),
        }
    }
}

impl std::fmt::Display for Learner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Learner::Ccml => "ccml",
            Learner::CcmlLocal => "ccml-local",
            Learner::Nca => "nca",
            Learner::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub learner: Learner,
    pub preprocess: PreprocessConfig,
    /// Projected dimension; `None` keeps the preprocessed dimension.
    pub output_dim: Option<usize>,
    pub train: TrainConfig,
    /// Neighbours used by the decision rules; `None` reuses `train.k`.
    pub decision_k: Option<usize>,
    pub ccknn: CcknnOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            learner: Learner::Ccml,
            preprocess: PreprocessConfig::default(),
            output_dim: None,
            train: TrainConfig::default(),
            decision_k: None,
            ccknn: CcknnOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn decision_k(&self) -> usize {
        self.decision_k.unwrap_or(self.train.k)
    }
}

/// A preprocessing stage followed by a learned linear metric.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub preprocessor: Preprocessor,
    pub metric: LinearMetric,
    pub trace: TrainTrace,
    /// The training configuration actually used, with the output dimension
    /// resolved.
    pub train_config: TrainConfig,
}

impl FittedModel {
    /// Preprocessing only.
    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.preprocessor.apply(x)
    }

    /// The identity metric on this model's preprocessed features.
    pub fn euclidean_baseline(&self) -> FittedModel {
        FittedModel {
            preprocessor: self.preprocessor.clone(),
            metric: LinearMetric::identity(self.metric.input_dim()),
            trace: TrainTrace::default(),
            train_config: self.train_config.clone(),
        }
    }
}

impl Embedding for FittedModel {
    fn input_dim(&self) -> usize {
        self.preprocessor
            .standardizer
            .as_ref()
            .map(|s| s.input_dim())
            .or_else(|| self.preprocessor.pca.as_ref().map(|p| p.input_dim()))
            .unwrap_or_else(|| self.metric.input_dim())
    }

    fn output_dim(&self) -> usize {
        self.metric.output_dim()
    }

    fn embed(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let pre = self.preprocessor.apply(x)?;
        self.metric.embed(pre.view())
    }
}

/// Fits preprocessing on `train` and then the configured learner.
pub fn fit(train: &LabeledDataset, cfg: &PipelineConfig) -> Result<FittedModel> {
    let preprocessor = Preprocessor::fit(train.features().view(), &cfg.preprocess)?;
    let features = preprocessor.apply(train.features().view())?;
    let pre = train.with_features(features)?;
    let input_dim = pre.n_features();
    let mut tc = cfg.train.clone();
    tc.output_dim = cfg.output_dim.unwrap_or(input_dim);
    if cfg.learner == Learner::CcmlLocal {
        tc.variant = Variant::CorrectClass;
    }
    let (metric, trace) = match cfg.learner {
        Learner::Ccml | Learner::CcmlLocal => ccml::train(&pre, &tc)?,
        Learner::Nca => nca::nca_train(&pre, &tc)?,
        Learner::Identity => {
            tc.output_dim = input_dim;
            (LinearMetric::identity(input_dim), TrainTrace::default())
        }
    };
    Ok(FittedModel {
        preprocessor,
        metric,
        trace,
        train_config: tc,
    })
}

/// Error rates of both decision rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleErrors {
    pub knn: f64,
    pub ccknn: f64,
}

/// Classifies `test` against `reference` under both rules.
pub fn evaluate_rules<E: Embedding>(
    model: &E,
    reference: &LabeledDataset,
    test: &LabeledDataset,
    k: usize,
    ccknn: &CcknnOptions,
) -> Result<RuleErrors> {
    let zr = model.embed(reference.features().view())?;
    let zq = model.embed(test.features().view())?;
    let c = reference.n_classes().max(test.n_classes());
    let knn_pred = knn_classify(zq.view(), zr.view(), reference.labels(), c, k)?;
    let cc = ccknn_classify(zq.view(), zr.view(), reference.labels(), c, k, ccknn)?;
    Ok(RuleErrors {
        knn: error_rate(&knn_pred, test.labels())?,
        ccknn: error_rate(&cc.predicted, test.labels())?,
    })
}

/// Learned-metric and Euclidean-baseline errors on one partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldResult {
    pub learned: RuleErrors,
    pub euclidean: RuleErrors,
}

/// Fits on `train`, evaluates on `test`, and evaluates the Euclidean
/// baseline on the same preprocessed features.
pub fn fit_and_evaluate(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &PipelineConfig,
) -> Result<(FittedModel, FoldResult)> {
    let model = fit(train, cfg)?;
    let k = cfg.decision_k();
    let learned = evaluate_rules(&model, train, test, k, &cfg.ccknn)?;
    let euclidean = evaluate_rules(&model.euclidean_baseline(), train, test, k, &cfg.ccknn)?;
    Ok((model, FoldResult { learned, euclidean }))
}

/// Stratified k-fold cross-validation of the full pipeline.
pub fn cross_validate(
    ds: &LabeledDataset,
    cfg: &PipelineConfig,
    folds: usize,
    seed: u64,
) -> Result<Vec<FoldResult>> {
    let spec = SplitSpec {
        folds: Some(folds),
        seed,
        ..Default::default()
    };
    let Split::Folds(parts) = split(ds, &spec)? else {
        unreachable!("folds requested")
    };
    parts
        .par_iter()
        .map(|p| fit_and_evaluate(&p.train, &p.test, cfg).map(|(_, r)| r))
        .collect()
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Outcome of one outer fold of nested cross-validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedFold {
    /// Index into the candidate grid of the configuration chosen on the
    /// inner folds.
    pub selected: usize,
    pub result: FoldResult,
}

/// Nested cross-validation: within each outer training fold, picks the grid
/// configuration with the lowest mean inner-fold CCKNN error (ties to the
/// earlier entry), refits it on the whole outer training fold and scores it
/// on the outer test fold.
pub fn nested_cross_validate(
    ds: &LabeledDataset,
    grid: &[PipelineConfig],
    outer_folds: usize,
    inner_folds: usize,
    seed: u64,
) -> Result<Vec<SelectedFold>> {
    if grid.is_empty() {
        return Err(Error::Config("empty configuration grid".into()));
    }
    let spec = SplitSpec {
        folds: Some(outer_folds),
        seed,
        ..Default::default()
    };
    let Split::Folds(parts) = split(ds, &spec)? else {
        unreachable!("folds requested")
    };
    parts
        .par_iter()
        .map(|p| {
            let errors = grid
                .par_iter()
                .map(|cfg| {
                    let inner = cross_validate(&p.train, cfg, inner_folds, seed.wrapping_add(1))?;
                    Ok(inner.iter().map(|r| r.learned.ccknn).sum::<f64>() / inner.len() as f64)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mut best = (0, f64::INFINITY);
            for (i, err) in errors.into_iter().enumerate() {
                if err < best.1 {
                    best = (i, err);
                }
            }
            let (_, result) = fit_and_evaluate(&p.train, &p.test, &grid[best.0])?;
            Ok(SelectedFold {
                selected: best.0,
                result,
            })
        })
        .collect()
}
