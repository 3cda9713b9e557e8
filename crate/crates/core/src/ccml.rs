//! Class-conditional metric learning.
//!
//! For a query `x_i` and class `C`, let `m_iC` be the mean squared distance
//! from `A x_i` to its `k` nearest embedded neighbours of class `C` (the
//! query itself excluded). The probability of assigning `x_i` to `C` is a
//! softmax over `-m_iC`, and training maximizes the expected number of
//! correct assignments `E(A) = sum_i p_i^{C_i}` by mini-batch gradient
//! ascent, searching neighbours only within the batch.
//!
//! The `correct_class` variant replaces the softmax over all classes with a
//! two-way comparison between the own class and the pooled `k` nearest
//! points of every other class.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, MiniBatch};
use crate::error::{Error, Result};
use crate::knn::{self, NeighborSet};
use crate::metric::{Embedding, InitSpec, LinearMetric};
use crate::sgd::{self, BatchEvaluation, BatchObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Softmax over every class present in the batch.
    #[default]
    AllClasses,
    /// Own class against the pooled complement of all other classes.
    CorrectClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Differentiates through both the query and each neighbour embedding.
    #[default]
    Full,
    /// Treats neighbour embeddings as constants, so each pair contributes
    /// `(A x_i - A x_n) x_i^T` only.
    QueryOnly,
}

/// Hyperparameters shared by the CCML and NCA trainers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Neighbours per class; ignored by NCA.
    pub k: usize,
    pub variant: Variant,
    pub gradient_mode: GradientMode,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Rows per mini-batch; values at or above the training size give
    /// full-batch training.
    pub batch_size: usize,
    pub weight_decay: f64,
    pub output_dim: usize,
    pub init: InitSpec,
    pub seed: u64,
    /// Record a trace entry every this many steps (the final step is always
    /// recorded).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 3,
            variant: Variant::AllClasses,
            gradient_mode: GradientMode::Full,
            learning_rate: 0.01,
            epochs: 100,
            batch_size: 100,
            weight_decay: 0.0,
            output_dim: 2,
            init: InitSpec::default(),
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.output_dim == 0 {
            return Err(Error::Config("output dimension must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub epoch: usize,
    pub step: usize,
    pub objective: f64,
    pub mean_prob: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    /// Writes `step,epoch,objective,mean_prob,grad_norm` rows.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "epoch", "objective", "mean_prob", "grad_norm"])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.epoch.to_string(),
                r.objective.to_string(),
                r.mean_prob.to_string(),
                r.grad_norm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A group of neighbours competing in one query's softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGroup {
    /// Class of the group, or `None` for the pooled complement.
    pub class: Option<usize>,
    pub is_own: bool,
    /// Batch-local row indices.
    pub neighbors: Vec<usize>,
}

/// Neighbour assignments for every query of a batch, held fixed while the
/// objective and its gradient are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub k: usize,
    pub groups: Vec<Vec<NeighborGroup>>,
}

fn check_batch(m: &LinearMetric, batch: &MiniBatch) -> Result<()> {
    if batch.features.ncols() != m.input_dim() {
        return Err(Error::Shape(format!(
            "batch has {} features, metric expects {}",
            batch.features.ncols(),
            m.input_dim()
        )));
    }
    if batch.labels.len() != batch.features.nrows() {
        return Err(Error::Shape("batch labels and features disagree".into()));
    }
    Ok(())
}

fn per_class_neighbors(z: ArrayView2<f64>, batch: &MiniBatch, k: usize) -> Result<NeighborSet> {
    let dist = knn::pairwise_sqdist(z, z)?;
    let self_map: Vec<usize> = (0..batch.len()).collect();
    knn::knn_per_class_from_dist(dist.view(), &batch.labels, batch.n_classes, k, Some(&self_map))
}

/// Finds the current neighbour groups of every batch query under `m`.
pub fn assign_neighbors(
    m: &LinearMetric,
    batch: &MiniBatch,
    k: usize,
    variant: Variant,
) -> Result<Assignment> {
    check_batch(m, batch)?;
    let z = m.embed(batch.features.view())?;
    let dist = knn::pairwise_sqdist(z.view(), z.view())?;
    let self_map: Vec<usize> = (0..batch.len()).collect();
    let per_class = knn::knn_per_class_from_dist(
        dist.view(),
        &batch.labels,
        batch.n_classes,
        k,
        Some(&self_map),
    )?;
    let indices = |list: &[knn::Neighbor]| list.iter().map(|n| n.index).collect::<Vec<_>>();
    let groups = match variant {
        Variant::AllClasses => (0..batch.len())
            .map(|q| {
                (0..batch.n_classes)
                    .filter(|&c| per_class.has_class(q, c))
                    .map(|c| NeighborGroup {
                        class: Some(c),
                        is_own: c == batch.labels[q],
                        neighbors: indices(per_class.get(q, c)),
                    })
                    .collect()
            })
            .collect(),
        Variant::CorrectClass => {
            let complement =
                knn::knn_excluding_class_from_dist(dist.view(), &batch.labels, &batch.labels, k)?;
            (0..batch.len())
                .map(|q| {
                    let own = batch.labels[q];
                    vec![
                        NeighborGroup {
                            class: Some(own),
                            is_own: true,
                            neighbors: indices(per_class.get(q, own)),
                        },
                        NeighborGroup {
                            class: None,
                            is_own: false,
                            neighbors: indices(&complement[q]),
                        },
                    ]
                })
                .collect()
        }
    };
    Ok(Assignment { k, groups })
}

/// Numerically stable softmax of `-energies`.
pub(crate) fn softmax_neg(energies: &[f64]) -> Vec<f64> {
    let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = energies.iter().map(|e| (min - e).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sq_norm_diff(z: &Array2<f64>, a: usize, b: usize) -> f64 {
    z.row(a)
        .iter()
        .zip(z.row(b).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Per-query group probabilities under fixed assignments.
fn group_probs(z: &Array2<f64>, assignment: &Assignment) -> Vec<Vec<f64>> {
    assignment
        .groups
        .iter()
        .enumerate()
        .map(|(q, groups)| {
            let energies: Vec<f64> = groups
                .iter()
                .map(|g| {
                    g.neighbors.iter().map(|&n| sq_norm_diff(z, q, n)).sum::<f64>()
                        / g.neighbors.len() as f64
                })
                .collect();
            softmax_neg(&energies)
        })
        .collect()
}

fn own_prob(groups: &[NeighborGroup], probs: &[f64]) -> f64 {
    groups
        .iter()
        .zip(probs)
        .find(|(g, _)| g.is_own)
        .map_or(0.0, |(_, &p)| p)
}

/// `sum_i` (pairwise weight) times the pair's outer-product gradient.
///
/// `weights[i][n]` multiplies `d/dA ||A(x_i - x_n)||^2 / 2 = A(x_i - x_n)(x_i - x_n)^T`
/// in full mode and `A(x_i - x_n) x_i^T` in query-only mode.
pub(crate) fn pair_weighted_gradient(
    z: &Array2<f64>,
    x: ArrayView2<f64>,
    weights: &Array2<f64>,
    mode: GradientMode,
) -> Array2<f64> {
    let laplacian = match mode {
        GradientMode::Full => {
            let sym = weights + &weights.t();
            let mut lap = -&sym;
            for (i, s) in sym.sum_axis(Axis(1)).iter().enumerate() {
                lap[[i, i]] += s;
            }
            lap
        }
        GradientMode::QueryOnly => {
            let mut lap = -&weights.t();
            for (i, r) in weights.sum_axis(Axis(1)).iter().enumerate() {
                lap[[i, i]] += r;
            }
            lap
        }
    };
    z.t().dot(&laplacian).dot(&x)
}

/// Objective and gradient under fixed neighbour assignments.
pub fn evaluate_with(
    m: &LinearMetric,
    batch: &MiniBatch,
    assignment: &Assignment,
    weight_decay: f64,
    mode: GradientMode,
) -> Result<BatchEvaluation> {
    check_batch(m, batch)?;
    if assignment.groups.len() != batch.len() {
        return Err(Error::Shape(format!(
            "assignment covers {} queries, batch has {}",
            assignment.groups.len(),
            batch.len()
        )));
    }
    let z = m.embed(batch.features.view())?;
    let probs = group_probs(&z, assignment);
    let n = batch.len();
    let mut weights = Array2::<f64>::zeros((n, n));
    let mut expected = 0.0;
    for (q, (groups, p)) in assignment.groups.iter().zip(&probs).enumerate() {
        let p_own = own_prob(groups, p);
        expected += p_own;
        for (g, &pg) in groups.iter().zip(p) {
            let indicator = if g.is_own { 1.0 } else { 0.0 };
            // d p_own / d m_g = -p_own (1[g own] - p_g); each m_g averages
            // its neighbours' squared distances.
            let w = -p_own * (indicator - pg) * 2.0 / g.neighbors.len() as f64;
            for &nb in &g.neighbors {
                weights[[q, nb]] += w;
            }
        }
    }
    let a = m.matrix();
    let mut gradient = pair_weighted_gradient(&z, batch.features.view(), &weights, mode);
    let mut objective = expected;
    if weight_decay > 0.0 {
        objective -= weight_decay * a.iter().map(|v| v * v).sum::<f64>();
        gradient.scaled_add(-2.0 * weight_decay, a);
    }
    Ok(BatchEvaluation {
        objective,
        mean_prob: if n > 0 { expected / n as f64 } else { 0.0 },
        gradient,
    })
}

/// Objective under fixed neighbour assignments.
pub fn objective_with(
    m: &LinearMetric,
    batch: &MiniBatch,
    assignment: &Assignment,
    weight_decay: f64,
) -> Result<f64> {
    Ok(evaluate_with(m, batch, assignment, weight_decay, GradientMode::Full)?.objective)
}

/// `p_i^C` for every batch query and every class; columns of classes absent
/// from the batch are zero.
pub fn class_probs(m: &LinearMetric, batch: &MiniBatch, k: usize) -> Result<Array2<f64>> {
    check_batch(m, batch)?;
    let z = m.embed(batch.features.view())?;
    let set = per_class_neighbors(z.view(), batch, k)?;
    let mut out = Array2::zeros((batch.len(), batch.n_classes));
    for q in 0..batch.len() {
        let classes: Vec<usize> = (0..batch.n_classes).filter(|&c| set.has_class(q, c)).collect();
        let energies: Vec<f64> = classes
            .iter()
            .map(|&c| set.mean_sq_dist(q, c).expect("present"))
            .collect();
        for (&c, p) in classes.iter().zip(softmax_neg(&energies)) {
            out[[q, c]] = p;
        }
    }
    Ok(out)
}

/// Probability of the true class against the pooled other classes.
pub fn correct_class_prob(m: &LinearMetric, batch: &MiniBatch, k: usize) -> Result<Array1<f64>> {
    check_batch(m, batch)?;
    let z = m.embed(batch.features.view())?;
    let set = per_class_neighbors(z.view(), batch, k)?;
    let dist = knn::pairwise_sqdist(z.view(), z.view())?;
    let complement =
        knn::knn_excluding_class_from_dist(dist.view(), &batch.labels, &batch.labels, k)?;
    Ok(Array1::from_iter((0..batch.len()).map(|q| {
        let own = set.mean_sq_dist(q, batch.labels[q]).expect("own class present");
        let other = complement[q].iter().map(|n| n.sq_dist).sum::<f64>() / k as f64;
        softmax_neg(&[own, other])[0]
    })))
}

/// `E(A)` on a batch, minus the weight-decay penalty.
pub fn objective(m: &LinearMetric, batch: &MiniBatch, cfg: &TrainConfig) -> Result<f64> {
    let assignment = assign_neighbors(m, batch, cfg.k, cfg.variant)?;
    objective_with(m, batch, &assignment, cfg.weight_decay)
}

/// `dE/dA` with neighbour assignments fixed at their current values.
pub fn gradient(m: &LinearMetric, batch: &MiniBatch, cfg: &TrainConfig) -> Result<Array2<f64>> {
    let assignment = assign_neighbors(m, batch, cfg.k, cfg.variant)?;
    Ok(evaluate_with(m, batch, &assignment, cfg.weight_decay, cfg.gradient_mode)?.gradient)
}

struct CcmlObjective<'a> {
    cfg: &'a TrainConfig,
}

impl BatchObjective for CcmlObjective<'_> {
    fn sampler_k(&self) -> usize {
        self.cfg.k
    }

    fn evaluate(&self, m: &LinearMetric, batch: &MiniBatch) -> Result<BatchEvaluation> {
        let assignment = assign_neighbors(m, batch, self.cfg.k, self.cfg.variant)?;
        evaluate_with(m, batch, &assignment, self.cfg.weight_decay, self.cfg.gradient_mode)
    }
}

/// Trains a CCML metric from the configured initialization.
pub fn train(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<(LinearMetric, TrainTrace)> {
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    let init = sgd::initial_metric(ds, cfg)?;
    train_from(ds, cfg, init)
}

/// Continues CCML training from an existing metric for `cfg.epochs` epochs.
pub fn train_from(
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    init: LinearMetric,
) -> Result<(LinearMetric, TrainTrace)> {
    sgd::run(ds, cfg, init, &CcmlObjective { cfg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MiniBatch;
    use ndarray::array;

    fn batch(features: Array2<f64>, labels: Vec<usize>) -> MiniBatch {
        let ds = LabeledDataset::new(features, labels).unwrap();
        MiniBatch::full(&ds)
    }

    #[test]
    fn symmetric_classes_split_evenly() {
        // The query at the origin sees one neighbour per class at distance 1.
        let b = batch(array![[0.0], [1.0], [-1.0], [5.0], [-5.0]], vec![0, 0, 1, 1, 0]);
        let p = class_probs(&LinearMetric::identity(1), &b, 1).unwrap();
        assert!((p[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((p[[0, 1]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn saturated_probability_is_stable() {
        let b = batch(
            array![[0.0, 0.0], [0.0, 0.0], [50f64.sqrt(), 0.0], [50f64.sqrt(), 0.0]],
            vec![0, 0, 1, 1],
        );
        let p = class_probs(&LinearMetric::identity(2), &b, 1).unwrap();
        assert!(p[[0, 0]] >= 1.0 - (-50f64).exp());
        assert!(p.iter().all(|v| v.is_finite()));
        let far = batch(array![[0.0], [0.0], [1e3], [1e3]], vec![0, 0, 1, 1]);
        let p = class_probs(&LinearMetric::identity(1), &far, 1).unwrap();
        assert_eq!(p[[0, 0]], 1.0);
        assert_eq!(p[[0, 1]], 0.0);
    }

    #[test]
    fn correct_class_symmetric_is_half() {
        let b = batch(array![[0.0], [2.0], [-2.0], [9.0], [-9.0], [7.0]], vec![0, 0, 1, 2, 1, 2]);
        let p = correct_class_prob(&LinearMetric::identity(1), &b, 1).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_class_objective_is_half_batch() {
        // Every point is equidistant from every other point.
        let b = batch(
            array![[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
            vec![0, 0, 1, 1],
        );
        let cfg = TrainConfig {
            k: 1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let obj = objective(&LinearMetric::identity(4), &b, &cfg).unwrap();
        assert!((obj - 2.0).abs() < 1e-15);
    }

    #[test]
    fn separated_classes_reach_batch_size_with_zero_gradient() {
        let b = batch(
            array![[0.0], [0.1], [0.2], [1e4], [1e4 + 0.1], [1e4 + 0.2]],
            vec![0, 0, 0, 1, 1, 1],
        );
        let cfg = TrainConfig {
            k: 2,
            ..Default::default()
        };
        let m = LinearMetric::identity(1);
        let obj = objective(&m, &b, &cfg).unwrap();
        assert_eq!(obj, 6.0);
        let g = gradient(&m, &b, &cfg).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn weight_decay_penalizes_norm() {
        let b = batch(array![[0.0], [1.0], [3.0], [4.0]], vec![0, 0, 1, 1]);
        let m = LinearMetric::new(array![[2.0]]).unwrap();
        let base = TrainConfig {
            k: 1,
            ..Default::default()
        };
        let decayed = TrainConfig {
            weight_decay: 0.5,
            ..base.clone()
        };
        let diff = objective(&m, &b, &base).unwrap() - objective(&m, &b, &decayed).unwrap();
        assert!((diff - 2.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            k: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
