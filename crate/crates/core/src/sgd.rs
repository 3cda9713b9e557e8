//! Mini-batch gradient ascent loop shared by the CCML and NCA trainers.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ccml::{TraceRecord, TrainConfig, TrainTrace};
use crate::dataset::{LabeledDataset, MiniBatch, MiniBatchSampler};
use crate::error::{Error, Result};
use crate::metric::{init_metric, Embedding, InitKind, LinearMetric};
use crate::preprocess::{fit_pca, PcaMode};

/// Objective value and gradient of one batch.
#[derive(Debug, Clone)]
pub struct BatchEvaluation {
    pub objective: f64,
    /// Mean probability of the correct outcome over batch queries.
    pub mean_prob: f64,
    pub gradient: Array2<f64>,
}

pub(crate) trait BatchObjective {
    /// Per-class floor for the sampler is `sampler_k() + 1`.
    fn sampler_k(&self) -> usize;
    fn evaluate(&self, m: &LinearMetric, batch: &MiniBatch) -> Result<BatchEvaluation>;
}

/// Starting metric for `cfg`, fitting PCA on the training rows when the
/// initialization asks for it.
pub(crate) fn initial_metric(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<LinearMetric> {
    let d = ds.n_features();
    match cfg.init.kind {
        InitKind::PcaSeeded => {
            let pca = fit_pca(ds.features().view(), PcaMode::FixedComponents(cfg.output_dim))?;
            init_metric(d, cfg.output_dim, &cfg.init, Some(&pca))
        }
        _ => init_metric(d, cfg.output_dim, &cfg.init, None),
    }
}

pub(crate) fn run<O: BatchObjective>(
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    mut metric: LinearMetric,
    objective: &O,
) -> Result<(LinearMetric, TrainTrace)> {
    cfg.validate()?;
    ds.check_trainable()?;
    if metric.input_dim() != ds.n_features() {
        return Err(Error::Shape(format!(
            "metric expects {} features, dataset has {}",
            metric.input_dim(),
            ds.n_features()
        )));
    }
    let mut trace = TrainTrace::default();
    if cfg.epochs == 0 {
        return Ok((metric, trace));
    }
    let k = objective.sampler_k();
    let sampler = MiniBatchSampler::new(ds, cfg.batch_size, k)?;
    let rows = sampler.feasible_rows();
    let steps_per_epoch = rows.div_ceil(cfg.batch_size.min(rows).max(1));
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for _ in 0..steps_per_epoch {
            let batch = sampler.sample(ds, &mut rng);
            let eval = objective.evaluate(&metric, &batch)?;
            let grad_norm = eval.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !eval.objective.is_finite() || !grad_norm.is_finite() {
                return Err(Error::Diverged {
                    step,
                    learning_rate: cfg.learning_rate,
                    detail: format!(
                        "objective {} with gradient norm {grad_norm}",
                        eval.objective
                    ),
                });
            }
            metric
                .matrix_mut()
                .scaled_add(cfg.learning_rate, &eval.gradient);
            if metric.matrix().iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    step,
                    learning_rate: cfg.learning_rate,
                    detail: "projection became non-finite".into(),
                });
            }
            step += 1;
            if step % cfg.log_every == 0 || step == total_steps {
                trace.records.push(TraceRecord {
                    epoch,
                    step,
                    objective: eval.objective,
                    mean_prob: eval.mean_prob,
                    grad_norm,
                });
            }
        }
    }
    Ok((metric, trace))
}
