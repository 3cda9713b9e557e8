//! Classification error and graded retrieval quality.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::classify::vote;
use crate::error::{Error, Result};
use crate::knn;
use crate::metric::Embedding;

/// Fraction of positions where `predicted` differs from `truth`.
pub fn error_rate(predicted: &[usize], truth: &[usize]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Data("error rate of an empty set".into()));
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / truth.len() as f64)
}

fn discounted_gain(relevant: impl Iterator<Item = bool>) -> f64 {
    relevant
        .enumerate()
        .filter(|&(_, r)| r)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

/// Normalized discounted cumulative gain of the first `k` items of a ranked
/// binary relevance list.
///
/// The ideal ranking places `min(total_relevant, k)` relevant items first;
/// `total_relevant` defaults to the number of relevant items in the list.
/// Returns 0 when nothing is relevant.
pub fn ndcg_at_k(relevances: &[bool], k: usize, total_relevant: Option<usize>) -> Result<f64> {
    if k == 0 || k > relevances.len() {
        return Err(Error::Config(format!(
            "k = {k} must lie in [1, {}]",
            relevances.len()
        )));
    }
    let total = total_relevant.unwrap_or_else(|| relevances.iter().filter(|&&r| r).count());
    let ideal = discounted_gain(std::iter::repeat_n(true, total.min(k)));
    if ideal == 0.0 {
        return Ok(0.0);
    }
    let dcg = discounted_gain(relevances[..k].iter().copied());
    Ok((dcg / ideal).min(1.0))
}

/// Mean nDCG over queries at each retrieval depth.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalCurve {
    pub points: Vec<(usize, f64)>,
    /// `queries x depths`.
    pub per_query: Option<Array2<f64>>,
}

impl RetrievalCurve {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "mean_ndcg"])?;
        for (k, v) in &self.points {
            w.write_record([k.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Retrieval curve of plain KNN ranking over already-embedded points.
///
/// Relevance is a class match between query and retrieved reference.
pub fn retrieval_curve_embedded(
    zq: ArrayView2<f64>,
    labels_q: &[usize],
    zr: ArrayView2<f64>,
    labels_r: &[usize],
    k_grid: &[usize],
) -> Result<RetrievalCurve> {
    if labels_q.len() != zq.nrows() || labels_r.len() != zr.nrows() {
        return Err(Error::Shape("labels and points disagree in length".into()));
    }
    if zq.nrows() == 0 {
        return Err(Error::Data("no retrieval queries".into()));
    }
    let k_max = k_grid.iter().copied().max().ok_or_else(|| {
        Error::Config("retrieval depth grid is empty".into())
    })?;
    if k_grid.contains(&0) {
        return Err(Error::Config("retrieval depths must be at least 1".into()));
    }
    if k_max > zr.nrows() {
        return Err(Error::Config(format!(
            "depth {k_max} exceeds {} reference points",
            zr.nrows()
        )));
    }
    let n_classes = labels_q.iter().chain(labels_r).max().map_or(0, |m| m + 1);
    let mut class_counts = vec![0usize; n_classes];
    for &l in labels_r {
        class_counts[l] += 1;
    }
    let neighbors = knn::knn_global(zq, zr, k_max, None)?;
    let rows: Vec<Vec<f64>> = neighbors
        .par_iter()
        .zip(labels_q.par_iter())
        .map(|(nbs, &label)| {
            let rel: Vec<bool> = nbs.iter().map(|n| labels_r[n.index] == label).collect();
            k_grid
                .iter()
                .map(|&k| ndcg_at_k(&rel, k, Some(class_counts[label])).expect("k checked"))
                .collect()
        })
        .collect();
    let per_query = Array2::from_shape_fn((rows.len(), k_grid.len()), |(q, j)| rows[q][j]);
    let points = k_grid
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, per_query.column(j).mean().expect("non-empty")))
        .collect();
    Ok(RetrievalCurve {
        points,
        per_query: Some(per_query),
    })
}

/// Embeds queries and references with `metric`, then computes the curve.
pub fn retrieval_curve<E: Embedding>(
    metric: &E,
    query: ArrayView2<f64>,
    labels_q: &[usize],
    reference: ArrayView2<f64>,
    labels_r: &[usize],
    k_grid: &[usize],
) -> Result<RetrievalCurve> {
    let zq = metric.embed(query)?;
    let zr = metric.embed(reference)?;
    retrieval_curve_embedded(zq.view(), labels_q, zr.view(), labels_r, k_grid)
}

/// Leave-one-out `k`-NN error: each point is classified by majority vote of
/// its `k` nearest other points.
pub fn loo_knn_error(z: ArrayView2<f64>, labels: &[usize], k: usize) -> Result<f64> {
    if labels.len() != z.nrows() {
        return Err(Error::Shape("labels and points disagree in length".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let self_map: Vec<usize> = (0..z.nrows()).collect();
    let neighbors = knn::knn_global(z, z, k, Some(&self_map))?;
    let predicted: Vec<usize> = neighbors
        .iter()
        .map(|nbs| vote(nbs, labels, n_classes))
        .collect();
    error_rate(&predicted, labels)
}
