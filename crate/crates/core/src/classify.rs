//! Test-time decision rules in an embedded space: majority-vote KNN and
//! class-conditional KNN (CCKNN).
//!
//! CCKNN searches the `k` nearest reference points inside each class and
//! picks the class whose neighbours are closest in total squared distance.

use log::warn;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ccml::softmax_neg;
use crate::error::{Error, Result};
use crate::knn;

/// Per-query class scores (log-posterior up to a per-query constant) and the
/// winning class, lowest id first on ties.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub scores: Array2<f64>,
    pub predicted: Vec<usize>,
}

fn argmax_lowest(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (c, v) in row.into_iter().enumerate() {
        if v > best_val {
            best = c;
            best_val = v;
        }
    }
    best
}

impl ClassScores {
    fn from_scores(scores: Array2<f64>) -> Self {
        let predicted = scores
            .rows()
            .into_iter()
            .map(|r| argmax_lowest(r.iter().copied()))
            .collect();
        Self { scores, predicted }
    }

    pub fn n_classes(&self) -> usize {
        self.scores.ncols()
    }

    /// Writes `query_index,predicted,score_0..score_{C-1}` rows.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["query_index".to_string(), "predicted".to_string()];
        header.extend((0..self.n_classes()).map(|c| format!("score_{c}")));
        w.write_record(&header)?;
        for (q, (row, &p)) in self.scores.rows().into_iter().zip(&self.predicted).enumerate() {
            let mut rec = vec![q.to_string(), p.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Majority vote among the `k` nearest reference points.
///
/// Vote ties go to the tied class with the smaller summed squared distance,
/// then to the lower class id.
pub fn knn_classify(
    zq: ArrayView2<f64>,
    zr: ArrayView2<f64>,
    labels_ref: &[usize],
    n_classes: usize,
    k: usize,
) -> Result<Vec<usize>> {
    if labels_ref.len() != zr.nrows() {
        return Err(Error::Shape(format!(
            "{} reference points but {} labels",
            zr.nrows(),
            labels_ref.len()
        )));
    }
    if k == 0 || k > zr.nrows() {
        return Err(Error::Config(format!(
            "k = {k} must lie in [1, {}]",
            zr.nrows()
        )));
    }
    let neighbors = knn::knn_global(zq, zr, k, None)?;
    Ok(neighbors
        .iter()
        .map(|nbs| vote(nbs, labels_ref, n_classes))
        .collect())
}

pub(crate) fn vote(nbs: &[knn::Neighbor], labels: &[usize], n_classes: usize) -> usize {
    let mut votes = vec![0usize; n_classes];
    let mut dist = vec![0f64; n_classes];
    for nb in nbs {
        votes[labels[nb.index]] += 1;
        dist[labels[nb.index]] += nb.sq_dist;
    }
    (0..n_classes)
        .filter(|&c| votes[c] > 0)
        .min_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                .then(dist[a].total_cmp(&dist[b]))
                .then(a.cmp(&b))
        })
        .expect("at least one neighbour")
}

/// How CCKNN turns per-class neighbour distances into scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CcknnMode {
    /// `score_C = -sum_j ||z - NN_j^C(z)||^2 + log prior_C`.
    #[default]
    SumSquared,
    /// Product of zero-mean Gaussian densities over the `k` per-class
    /// neighbour distances, with the variance pooled over all `C x k`
    /// distances of the query, times the class prior.
    Gaussian,
}

/// Class priors for CCKNN.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Priors {
    #[default]
    Uniform,
    /// Proportional to reference-set class frequencies.
    Frequency,
    Explicit(Vec<f64>),
}

impl Priors {
    fn resolve(&self, labels_ref: &[usize], n_classes: usize) -> Result<Vec<f64>> {
        match self {
            Priors::Uniform => Ok(vec![1.0 / n_classes as f64; n_classes]),
            Priors::Frequency => {
                let mut counts = vec![0f64; n_classes];
                for &l in labels_ref {
                    counts[l] += 1.0;
                }
                let total = labels_ref.len() as f64;
                Ok(counts.into_iter().map(|c| c / total).collect())
            }
            Priors::Explicit(p) => {
                if p.len() != n_classes {
                    return Err(Error::Config(format!(
                        "{} priors for {n_classes} classes",
                        p.len()
                    )));
                }
                if p.iter().any(|&v| !(v > 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::Config("priors must be positive and sum to 1".into()));
                }
                Ok(p.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CcknnOptions {
    pub mode: CcknnMode,
    pub priors: Priors,
}

/// Class-conditional KNN decision with per-class scores.
pub fn ccknn_classify(
    zq: ArrayView2<f64>,
    zr: ArrayView2<f64>,
    labels_ref: &[usize],
    n_classes: usize,
    k: usize,
    options: &CcknnOptions,
) -> Result<ClassScores> {
    if labels_ref.len() != zr.nrows() {
        return Err(Error::Shape(format!(
            "{} reference points but {} labels",
            zr.nrows(),
            labels_ref.len()
        )));
    }
    let mut counts = vec![0usize; n_classes];
    for &l in labels_ref {
        if l >= n_classes {
            return Err(Error::Data(format!("label {l} outside [0, {n_classes})")));
        }
        counts[l] += 1;
    }
    if let Some((class, &available)) = counts.iter().enumerate().find(|(_, &c)| c < k) {
        return Err(Error::Feasibility {
            class,
            k,
            available,
        });
    }
    let log_prior: Vec<f64> = options
        .priors
        .resolve(labels_ref, n_classes)?
        .into_iter()
        .map(f64::ln)
        .collect();
    let set = knn::knn_per_class(zq, zr, labels_ref, n_classes, k, None)?;
    let nq = zq.nrows();
    let mut scores = Array2::zeros((nq, n_classes));
    let mut degenerate = 0usize;
    for q in 0..nq {
        let sums: Vec<f64> = (0..n_classes)
            .map(|c| set.get(q, c).iter().map(|n| n.sq_dist).sum())
            .collect();
        match options.mode {
            CcknnMode::SumSquared => {
                for c in 0..n_classes {
                    scores[[q, c]] = -sums[c] + log_prior[c];
                }
            }
            CcknnMode::Gaussian => {
                // Densities are centered at zero, so the pooled variance is
                // the mean of the squared distances.
                let variance = sums.iter().sum::<f64>() / (n_classes * k) as f64;
                if variance > 0.0 {
                    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * variance).ln();
                    for c in 0..n_classes {
                        scores[[q, c]] =
                            k as f64 * log_norm - sums[c] / (2.0 * variance) + log_prior[c];
                    }
                } else {
                    degenerate += 1;
                    for c in 0..n_classes {
                        scores[[q, c]] = -sums[c];
                    }
                }
            }
        }
    }
    if degenerate > 0 {
        warn!(
            "{degenerate} queries had zero pooled neighbour variance; \
             scored them by summed squared distance without priors"
        );
    }
    Ok(ClassScores::from_scores(scores))
}

/// CCKNN scores normalized into per-query class probabilities.
pub fn ccknn_posterior(
    zq: ArrayView2<f64>,
    zr: ArrayView2<f64>,
    labels_ref: &[usize],
    n_classes: usize,
    k: usize,
    options: &CcknnOptions,
) -> Result<ClassScores> {
    let raw = ccknn_classify(zq, zr, labels_ref, n_classes, k, options)?;
    let mut probs = raw.scores.clone();
    for mut row in probs.rows_mut() {
        let neg: Vec<f64> = row.iter().map(|s| -s).collect();
        for (slot, p) in row.iter_mut().zip(softmax_neg(&neg)) {
            *slot = p;
        }
    }
    Ok(ClassScores::from_scores(probs))
}
