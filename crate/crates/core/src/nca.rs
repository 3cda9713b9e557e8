//! Neighbourhood Components Analysis baseline.
//!
//! Each point `i` picks a neighbour `j != i` with probability proportional
//! to `exp(-||A x_i - A x_j||^2)`; the objective is the expected number of
//! same-class picks. Training reuses the CCML sampler, initialization and
//! ascent loop so that only the objective differs.

use ndarray::{Array2, Axis};

use crate::ccml::{pair_weighted_gradient, GradientMode, TrainConfig, TrainTrace};
use crate::dataset::{LabeledDataset, MiniBatch};
use crate::error::{Error, Result};
use crate::knn;
use crate::metric::{Embedding, LinearMetric};
use crate::sgd::{self, BatchEvaluation, BatchObjective};

fn check(m: &LinearMetric, batch: &MiniBatch) -> Result<()> {
    if batch.len() < 2 {
        return Err(Error::Data("NCA needs at least 2 points per batch".into()));
    }
    if batch.features.ncols() != m.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} features, metric expects {}",
            batch.features.ncols(),
            m.input_dim()
        )));
    }
    Ok(())
}

fn select_probs_from_dist(dist: &Array2<f64>) -> Array2<f64> {
    let n = dist.nrows();
    let mut p = Array2::zeros((n, n));
    for (i, (row, mut out)) in dist
        .axis_iter(Axis(0))
        .zip(p.axis_iter_mut(Axis(0)))
        .enumerate()
    {
        let min = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &d)| d)
            .fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for (j, (&d, o)) in row.iter().zip(out.iter_mut()).enumerate() {
            if j != i {
                *o = (min - d).exp();
                total += *o;
            }
        }
        out.mapv_inplace(|v| v / total);
    }
    p
}

/// `p_i(j)` for every ordered pair of batch points, with `p_i(i) = 0`.
pub fn nca_select_probs(m: &LinearMetric, batch: &MiniBatch) -> Result<Array2<f64>> {
    check(m, batch)?;
    let z = m.embed(batch.features.view())?;
    let dist = knn::pairwise_sqdist(z.view(), z.view())?;
    Ok(select_probs_from_dist(&dist))
}

/// Expected number of points whose stochastic neighbour shares their class.
pub fn nca_objective(m: &LinearMetric, batch: &MiniBatch) -> Result<f64> {
    let p = nca_select_probs(m, batch)?;
    Ok(same_class_mass(&p, &batch.labels).iter().sum())
}

fn same_class_mass(p: &Array2<f64>, labels: &[usize]) -> Vec<f64> {
    p.axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .zip(labels)
                .filter(|&(_, &l)| l == labels[i])
                .map(|(&v, _)| v)
                .sum()
        })
        .collect()
}

/// NCA objective (minus weight decay) and its gradient with respect to `A`.
pub fn nca_evaluate(m: &LinearMetric, batch: &MiniBatch, weight_decay: f64) -> Result<BatchEvaluation> {
    check(m, batch)?;
    let z = m.embed(batch.features.view())?;
    let dist = knn::pairwise_sqdist(z.view(), z.view())?;
    let p = select_probs_from_dist(&dist);
    let mass = same_class_mass(&p, &batch.labels);
    let n = batch.len();
    // d L_i / d d_ij = -p_ij (1[C_i = C_j] - P_i); d d_ij / dA = 2 A x_ij x_ij^T.
    let weights = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            let same = if batch.labels[i] == batch.labels[j] { 1.0 } else { 0.0 };
            -2.0 * p[[i, j]] * (same - mass[i])
        }
    });
    let a = m.matrix();
    let mut gradient = pair_weighted_gradient(&z, batch.features.view(), &weights, GradientMode::Full);
    let expected: f64 = mass.iter().sum();
    let mut objective = expected;
    if weight_decay > 0.0 {
        objective -= weight_decay * a.iter().map(|v| v * v).sum::<f64>();
        gradient.scaled_add(-2.0 * weight_decay, a);
    }
    Ok(BatchEvaluation {
        objective,
        mean_prob: expected / n as f64,
        gradient,
    })
}

struct NcaObjective {
    weight_decay: f64,
}

impl BatchObjective for NcaObjective {
    // Every sampled class keeps at least two members, so each point has a
    // same-class candidate.
    fn sampler_k(&self) -> usize {
        1
    }

    fn evaluate(&self, m: &LinearMetric, batch: &MiniBatch) -> Result<BatchEvaluation> {
        nca_evaluate(m, batch, self.weight_decay)
    }
}

/// Trains an NCA metric; `cfg.k`, `cfg.variant` and `cfg.gradient_mode`
/// are ignored.
pub fn nca_train(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<(LinearMetric, TrainTrace)> {
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    let init = sgd::initial_metric(ds, cfg)?;
    nca_train_from(ds, cfg, init)
}

pub fn nca_train_from(
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    init: LinearMetric,
) -> Result<(LinearMetric, TrainTrace)> {
    sgd::run(
        ds,
        cfg,
        init,
        &NcaObjective {
            weight_decay: cfg.weight_decay,
        },
    )
}
