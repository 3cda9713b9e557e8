//! Exact nearest-neighbour search over embedded points.
//!
//! Every search orders reference points by `(squared distance, index)`, so
//! ties always resolve to the smaller reference index.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub sq_dist: f64,
}

fn by_distance_then_index(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.sq_dist
        .total_cmp(&b.sq_dist)
        .then(a.index.cmp(&b.index))
}

/// Per-query, per-class lists of the `k` nearest reference points.
///
/// Classes with no reference members have empty lists.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    k: usize,
    n_classes: usize,
    lists: Vec<Vec<Neighbor>>,
}

impl NeighborSet {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_queries(&self) -> usize {
        if self.n_classes == 0 {
            0
        } else {
            self.lists.len() / self.n_classes
        }
    }

    /// Neighbours of `query` within `class`, nearest first.
    pub fn get(&self, query: usize, class: usize) -> &[Neighbor] {
        &self.lists[query * self.n_classes + class]
    }

    /// Whether `class` contributed neighbours for `query`.
    pub fn has_class(&self, query: usize, class: usize) -> bool {
        !self.get(query, class).is_empty()
    }

    /// Mean squared distance to the `k` neighbours, `None` for absent classes.
    pub fn mean_sq_dist(&self, query: usize, class: usize) -> Option<f64> {
        let list = self.get(query, class);
        if list.is_empty() {
            None
        } else {
            Some(list.iter().map(|n| n.sq_dist).sum::<f64>() / list.len() as f64)
        }
    }

    /// Sum of squared distances to the `k` neighbours.
    pub fn sum_sq_dist(&self, query: usize, class: usize) -> Option<f64> {
        self.mean_sq_dist(query, class).map(|m| m * self.k as f64)
    }
}

fn check_cols(zq: &ArrayView2<f64>, zr: &ArrayView2<f64>) -> Result<()> {
    if zq.ncols() != zr.ncols() {
        return Err(Error::Shape(format!(
            "query points have {} columns, reference points {}",
            zq.ncols(),
            zr.ncols()
        )));
    }
    Ok(())
}

/// All squared Euclidean distances between query rows and reference rows.
pub fn pairwise_sqdist(zq: ArrayView2<f64>, zr: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_cols(&zq, &zr)?;
    let mut out = Array2::zeros((zq.nrows(), zr.nrows()));
    Zip::from(out.axis_iter_mut(Axis(0)))
        .and(zq.axis_iter(Axis(0)))
        .par_for_each(|mut row, q| {
            for (slot, r) in row.iter_mut().zip(zr.axis_iter(Axis(0))) {
                let d: f64 = q.iter().zip(r.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                *slot = d.max(0.0);
            }
        });
    Ok(out)
}

fn check_labels(dist: &ArrayView2<f64>, labels_ref: &[usize], n_classes: usize) -> Result<()> {
    if dist.ncols() != labels_ref.len() {
        return Err(Error::Shape(format!(
            "{} reference points but {} labels",
            dist.ncols(),
            labels_ref.len()
        )));
    }
    if let Some(&bad) = labels_ref.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Data(format!("label {bad} outside [0, {n_classes})")));
    }
    Ok(())
}

fn check_self_map(dist: &ArrayView2<f64>, exclude_self: Option<&[usize]>) -> Result<()> {
    if let Some(map) = exclude_self {
        if map.len() != dist.nrows() {
            return Err(Error::Shape(format!(
                "self-exclusion map has {} entries for {} queries",
                map.len(),
                dist.nrows()
            )));
        }
        if let Some(&bad) = map.iter().find(|&&r| r >= dist.ncols()) {
            return Err(Error::Shape(format!(
                "self-exclusion index {bad} outside {} reference points",
                dist.ncols()
            )));
        }
    }
    Ok(())
}

/// Reference indices of one distance row sorted by `(distance, index)`.
fn sorted_row(row: ndarray::ArrayView1<f64>) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = row
        .iter()
        .enumerate()
        .map(|(index, &sq_dist)| Neighbor { index, sq_dist })
        .collect();
    all.sort_unstable_by(by_distance_then_index);
    all
}

/// Per-class `k`-NN from a precomputed `q x r` squared-distance matrix.
///
/// `exclude_self[q]`, when given, is the reference index of query `q`
/// itself, which is skipped.
pub fn knn_per_class_from_dist(
    dist: ArrayView2<f64>,
    labels_ref: &[usize],
    n_classes: usize,
    k: usize,
    exclude_self: Option<&[usize]>,
) -> Result<NeighborSet> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    check_labels(&dist, labels_ref, n_classes)?;
    check_self_map(&dist, exclude_self)?;
    let mut counts = vec![0usize; n_classes];
    for &l in labels_ref {
        counts[l] += 1;
    }
    for (class, &count) in counts.iter().enumerate() {
        if count > 0 && count < k {
            return Err(Error::Feasibility {
                class,
                k,
                available: count,
            });
        }
    }
    if let Some(map) = exclude_self {
        for &r in map {
            let class = labels_ref[r];
            if counts[class] - 1 < k {
                return Err(Error::Feasibility {
                    class,
                    k,
                    available: counts[class] - 1,
                });
            }
        }
    }
    let present = counts.iter().filter(|&&c| c > 0).count();

    // One sort per query, then a single scan that fills every class bucket.
    let per_query: Vec<Vec<Vec<Neighbor>>> = dist
        .axis_iter(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(q, row)| {
            let skip = exclude_self.map(|m| m[q]);
            let mut buckets: Vec<Vec<Neighbor>> = vec![Vec::with_capacity(k); n_classes];
            let mut full = 0;
            for nb in sorted_row(row) {
                if Some(nb.index) == skip {
                    continue;
                }
                let bucket = &mut buckets[labels_ref[nb.index]];
                if bucket.len() < k {
                    bucket.push(nb);
                    if bucket.len() == k {
                        full += 1;
                        if full == present {
                            break;
                        }
                    }
                }
            }
            buckets
        })
        .collect();
    Ok(NeighborSet {
        k,
        n_classes,
        lists: per_query.into_iter().flatten().collect(),
    })
}

/// For each query and class, the `k` nearest reference points of that class.
pub fn knn_per_class(
    zq: ArrayView2<f64>,
    zr: ArrayView2<f64>,
    labels_ref: &[usize],
    n_classes: usize,
    k: usize,
    exclude_self: Option<&[usize]>,
) -> Result<NeighborSet> {
    let dist = pairwise_sqdist(zq, zr)?;
    knn_per_class_from_dist(dist.view(), labels_ref, n_classes, k, exclude_self)
}

/// `k`-NN among reference points whose class differs from `excluded[q]`,
/// from a precomputed distance matrix.
pub fn knn_excluding_class_from_dist(
    dist: ArrayView2<f64>,
    labels_ref: &[usize],
    excluded: &[usize],
    k: usize,
) -> Result<Vec<Vec<Neighbor>>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if excluded.len() != dist.nrows() {
        return Err(Error::Shape(format!(
            "{} excluded classes for {} queries",
            excluded.len(),
            dist.nrows()
        )));
    }
    let n_classes = labels_ref
        .iter()
        .chain(excluded)
        .copied()
        .max()
        .map_or(0, |m| m + 1);
    check_labels(&dist, labels_ref, n_classes)?;
    let mut counts = vec![0usize; n_classes];
    for &l in labels_ref {
        counts[l] += 1;
    }
    for &c in excluded {
        let available = labels_ref.len() - counts[c];
        if available < k {
            return Err(Error::Feasibility {
                class: c,
                k,
                available,
            });
        }
    }
    Ok(dist
        .axis_iter(Axis(0))
        .into_par_iter()
        .zip(excluded.par_iter())
        .map(|(row, &skip_class)| {
            sorted_row(row)
                .into_iter()
                .filter(|nb| labels_ref[nb.index] != skip_class)
                .take(k)
                .collect()
        })
        .collect())
}

/// `k` nearest reference points outside `excluded[q]`'s class, per query.
pub fn knn_excluding_class(
    zq: ArrayView2<f64>,
    zr: ArrayView2<f64>,
    labels_ref: &[usize],
    excluded: &[usize],
    k: usize,
) -> Result<Vec<Vec<Neighbor>>> {
    let dist = pairwise_sqdist(zq, zr)?;
    knn_excluding_class_from_dist(dist.view(), labels_ref, excluded, k)
}

/// Plain `k`-NN over all reference points from a precomputed distance matrix.
pub fn knn_global_from_dist(
    dist: ArrayView2<f64>,
    k: usize,
    exclude_self: Option<&[usize]>,
) -> Result<Vec<Vec<Neighbor>>> {
    check_self_map(&dist, exclude_self)?;
    let available = dist.ncols() - usize::from(exclude_self.is_some());
    if k == 0 || k > available {
        return Err(Error::Config(format!(
            "k = {k} must lie in [1, {available}] for this reference set"
        )));
    }
    Ok(dist
        .axis_iter(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(q, row)| {
            let skip = exclude_self.map(|m| m[q]);
            let mut all: Vec<Neighbor> = row
                .iter()
                .enumerate()
                .filter(|&(i, _)| Some(i) != skip)
                .map(|(index, &sq_dist)| Neighbor { index, sq_dist })
                .collect();
            if k < all.len() {
                all.select_nth_unstable_by(k - 1, by_distance_then_index);
                all.truncate(k);
            }
            all.sort_unstable_by(by_distance_then_index);
            all
        })
        .collect())
}

/// Plain `k`-NN over all reference points.
pub fn knn_global(
    zq: ArrayView2<f64>,
    zr: ArrayView2<f64>,
    k: usize,
    exclude_self: Option<&[usize]>,
) -> Result<Vec<Vec<Neighbor>>> {
    let dist = pairwise_sqdist(zq, zr)?;
    knn_global_from_dist(dist.view(), k, exclude_self)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn self_distances_are_zero() {
        let z = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]];
        let d = pairwise_sqdist(z.view(), z.view()).unwrap();
        for i in 0..3 {
            assert_eq!(d[[i, i]], 0.0);
        }
        let d = pairwise_sqdist(array![[0.0]].view(), array![[3.0]].view()).unwrap();
        assert_eq!(d[[0, 0]], 9.0);
        assert!(pairwise_sqdist(z.view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn per_class_small_example() {
        // Class 0 at squared distances 1 and 4, class 1 at 2.
        let zq = array![[0.0, 0.0]];
        let zr = array![[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]];
        let set = knn_per_class(zq.view(), zr.view(), &[0, 0, 1], 2, 1, None).unwrap();
        assert_eq!(set.get(0, 0), &[Neighbor { index: 0, sq_dist: 1.0 }]);
        assert_eq!(set.get(0, 1), &[Neighbor { index: 2, sq_dist: 2.0 }]);
    }

    #[test]
    fn self_exclusion_skips_query() {
        let z = array![[0.0], [1.0], [5.0], [0.2]];
        let labels = [0, 0, 1, 1];
        let set = knn_per_class(z.view(), z.view(), &labels, 2, 1, Some(&[0, 1, 2, 3])).unwrap();
        assert_eq!(set.get(0, 0)[0].index, 1);
        assert_eq!(set.get(0, 1)[0].index, 3);
        assert_eq!(set.get(3, 1)[0].index, 2);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let zq = array![[0.0]];
        let zr = array![[1.0], [-1.0], [1.0]];
        let set = knn_per_class(zq.view(), zr.view(), &[0, 0, 0], 1, 2, None).unwrap();
        let idx: Vec<usize> = set.get(0, 0).iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![0, 1]);
    }

    #[test]
    fn infeasible_class_is_reported() {
        let z = array![[0.0], [1.0], [2.0]];
        let err = knn_per_class(z.view(), z.view(), &[0, 0, 1], 2, 2, None).unwrap_err();
        assert!(matches!(err, Error::Feasibility { class: 1, k: 2, available: 1 }));
        let err =
            knn_per_class(z.view(), z.view(), &[0, 0, 1], 2, 1, Some(&[0, 1, 2])).unwrap_err();
        assert!(matches!(err, Error::Feasibility { class: 1, .. }));
    }

    #[test]
    fn absent_class_has_empty_list() {
        let z = array![[0.0], [1.0]];
        let set = knn_per_class(z.view(), z.view(), &[0, 2], 3, 1, None).unwrap();
        assert!(!set.has_class(0, 1));
        assert_eq!(set.mean_sq_dist(0, 1), None);
        assert_eq!(set.mean_sq_dist(0, 2), Some(1.0));
    }

    #[test]
    fn excluding_class_two_class_identity() {
        let zq = array![[0.0, 0.0], [2.0, 1.0]];
        let zr = array![[1.0, 0.0], [0.0, 3.0], [1.0, 1.0], [4.0, 4.0]];
        let labels = [0, 1, 0, 1];
        let per = knn_per_class(zq.view(), zr.view(), &labels, 2, 2, None).unwrap();
        let ex = knn_excluding_class(zq.view(), zr.view(), &labels, &[0, 0], 2).unwrap();
        for q in 0..2 {
            assert_eq!(ex[q].as_slice(), per.get(q, 1));
        }
    }

    #[test]
    fn excluding_class_k1_is_nearest_other() {
        let zq = array![[0.0]];
        let zr = array![[0.1], [3.0], [-2.0], [2.5]];
        let ex = knn_excluding_class(zq.view(), zr.view(), &[0, 1, 2, 1], &[0], 1).unwrap();
        assert_eq!(ex[0][0].index, 2);
        assert!(knn_excluding_class(zq.view(), zr.view(), &[0, 1, 2, 1], &[0], 4).is_err());
    }

    #[test]
    fn global_knn_respects_k_bounds() {
        let z = array![[0.0], [1.0], [3.0]];
        let nn = knn_global(z.view(), z.view(), 1, Some(&[0, 1, 2])).unwrap();
        assert_eq!(nn[0][0].index, 1);
        assert_eq!(nn[2][0].index, 1);
        assert!(knn_global(z.view(), z.view(), 3, Some(&[0, 1, 2])).is_err());
        assert!(knn_global(z.view(), z.view(), 0, None).is_err());
    }
}
