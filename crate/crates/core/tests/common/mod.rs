//! Brute-force reference implementations and random instance generators
//! shared by the integration tests.
#![allow(dead_code)]

use ccml_core::ccml::{self, Assignment};
use ccml_core::dataset::{LabeledDataset, MiniBatch};
use ccml_core::{LinearMetric, Variant};
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..scale))
}

/// Labels with every class holding at least `min_per_class` members,
/// shuffled.
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize, min_per_class: usize) -> Vec<usize> {
    assert!(n >= classes * min_per_class);
    let mut labels: Vec<usize> = (0..classes)
        .flat_map(|c| std::iter::repeat_n(c, min_per_class))
        .collect();
    while labels.len() < n {
        labels.push(rng.gen_range(0..classes));
    }
    for i in (1..labels.len()).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    labels
}

pub struct Instance {
    pub batch: MiniBatch,
    pub metric: LinearMetric,
    pub k: usize,
}

/// A random batch of `n` points in `d` dimensions over `classes` classes,
/// each with at least `k + 1` members, and a random `p x d` metric.
pub fn random_instance(seed: u64, n: usize, d: usize, p: usize, classes: usize, k: usize) -> Instance {
    let mut r = rng(seed);
    let labels = random_labels(&mut r, n, classes, k + 1);
    let x = random_matrix(&mut r, n, d, 1.0);
    let a = random_matrix(&mut r, p, d, 1.0);
    let ds = LabeledDataset::new(x, labels).unwrap();
    Instance {
        batch: MiniBatch::full(&ds),
        metric: LinearMetric::new(a).unwrap(),
        k,
    }
}

pub fn project(a: &Array2<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let p = a.nrows();
    let mut z = Array2::zeros((n, p));
    for i in 0..n {
        for r in 0..p {
            let mut s = 0.0;
            for j in 0..d {
                s += a[[r, j]] * x[[i, j]];
            }
            z[[i, r]] = s;
        }
    }
    z
}

pub fn sqdist(a: ArrayView2<f64>, i: usize, b: ArrayView2<f64>, j: usize) -> f64 {
    let mut s = 0.0;
    for c in 0..a.ncols() {
        let t = a[[i, c]] - b[[j, c]];
        s += t * t;
    }
    s
}

/// `(distance, index)` pairs of the reference rows accepted by `keep`,
/// sorted ascending with ties broken by index.
pub fn ranked(
    zq: ArrayView2<f64>,
    q: usize,
    zr: ArrayView2<f64>,
    keep: impl Fn(usize) -> bool,
) -> Vec<(f64, usize)> {
    let mut v: Vec<(f64, usize)> = (0..zr.nrows())
        .filter(|&r| keep(r))
        .map(|r| (sqdist(zq, q, zr, r), r))
        .collect();
    v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    v
}

/// `[query][class]` lists of the `k` nearest references of each class.
pub fn oracle_knn_per_class(
    zq: ArrayView2<f64>,
    zr: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    k: usize,
    exclude_self: bool,
) -> Vec<Vec<Vec<(f64, usize)>>> {
    (0..zq.nrows())
        .map(|q| {
            (0..classes)
                .map(|c| {
                    let mut v = ranked(zq, q, zr, |r| labels[r] == c && !(exclude_self && r == q));
                    v.truncate(k);
                    v
                })
                .collect()
        })
        .collect()
}

pub fn oracle_knn_excluding(
    zq: ArrayView2<f64>,
    zr: ArrayView2<f64>,
    labels: &[usize],
    excluded: &[usize],
    k: usize,
) -> Vec<Vec<(f64, usize)>> {
    (0..zq.nrows())
        .map(|q| {
            let mut v = ranked(zq, q, zr, |r| labels[r] != excluded[q]);
            v.truncate(k);
            v
        })
        .collect()
}

/// Class minimizing the summed squared distance to its `k` nearest
/// references; ties go to the lowest class id.
pub fn oracle_ccknn(
    zq: ArrayView2<f64>,
    zr: ArrayView2<f64>,
    labels: &[usize],
    classes: usize,
    k: usize,
) -> Vec<usize> {
    let lists = oracle_knn_per_class(zq, zr, labels, classes, k, false);
    lists
        .iter()
        .map(|per_class| {
            let sums: Vec<f64> = per_class
                .iter()
                .map(|l| l.iter().map(|(d, _)| d).sum())
                .collect();
            let mut best = 0;
            for c in 1..classes {
                if sums[c] < sums[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn mean_k(list: &[(f64, usize)], k: usize) -> f64 {
    list.iter().take(k).map(|(d, _)| d).sum::<f64>() / k as f64
}

/// Class probabilities written out directly: exponentials of negated mean
/// `k`-NN squared distances, normalized by their sum.
pub fn slow_class_probs(batch: &MiniBatch, a: &Array2<f64>, k: usize) -> Array2<f64> {
    let z = project(a, batch.features.view());
    let n = z.nrows();
    let c = batch.n_classes;
    let mut out = Array2::zeros((n, c));
    for i in 0..n {
        let mut e = vec![0.0; c];
        for class in 0..c {
            let list = ranked(z.view(), i, z.view(), |r| r != i && batch.labels[r] == class);
            e[class] = (-mean_k(&list, k)).exp();
        }
        let total: f64 = e.iter().sum();
        for class in 0..c {
            out[[i, class]] = e[class] / total;
        }
    }
    out
}

pub fn slow_correct_class_prob(batch: &MiniBatch, a: &Array2<f64>, k: usize) -> Array1<f64> {
    let z = project(a, batch.features.view());
    Array1::from_iter((0..z.nrows()).map(|i| {
        let own_class = batch.labels[i];
        let own = ranked(z.view(), i, z.view(), |r| r != i && batch.labels[r] == own_class);
        let other = ranked(z.view(), i, z.view(), |r| batch.labels[r] != own_class);
        let eo = (-mean_k(&own, k)).exp();
        let ec = (-mean_k(&other, k)).exp();
        eo / (eo + ec)
    }))
}

/// Central finite differences of the frozen-assignment objective.
pub fn fd_gradient(
    batch: &MiniBatch,
    a: &Array2<f64>,
    assignment: &Assignment,
    weight_decay: f64,
    h: f64,
    objective: impl Fn(&LinearMetric, &MiniBatch, &Assignment, f64) -> f64,
) -> Array2<f64> {
    let mut g = Array2::zeros(a.raw_dim());
    for idx in ndarray::indices(a.raw_dim()) {
        let mut plus = a.clone();
        plus[idx] += h;
        let mut minus = a.clone();
        minus[idx] -= h;
        let fp = objective(&LinearMetric::new(plus).unwrap(), batch, assignment, weight_decay);
        let fm = objective(&LinearMetric::new(minus).unwrap(), batch, assignment, weight_decay);
        g[idx] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Largest elementwise relative error, with `floor` guarding entries where
/// both values are near zero.
pub fn max_rel_err(analytic: &Array2<f64>, numeric: &Array2<f64>, floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Finite-difference check of the full-mode CCML gradient on one random
/// instance; returns the worst relative error.
pub fn ccml_gradient_check(seed: u64, variant: Variant) -> f64 {
    let mut r = rng(seed);
    let k = r.gen_range(1..=3);
    let classes = r.gen_range(2..=3);
    let min_n = classes * (k + 1);
    let n = r.gen_range(min_n.max(6)..=16);
    let d = r.gen_range(1..=6);
    let p = r.gen_range(1..=3);
    let weight_decay = if r.gen_bool(0.5) { 0.0 } else { 0.1 };
    let inst = random_instance(seed.wrapping_mul(7919), n, d, p, classes, k);
    let assignment = ccml::assign_neighbors(&inst.metric, &inst.batch, k, variant).unwrap();
    let analytic = ccml::evaluate_with(
        &inst.metric,
        &inst.batch,
        &assignment,
        weight_decay,
        ccml_core::GradientMode::Full,
    )
    .unwrap()
    .gradient;
    let numeric = fd_gradient(
        &inst.batch,
        inst.metric.matrix(),
        &assignment,
        weight_decay,
        1e-5,
        |m, b, asg, wd| ccml::objective_with(m, b, asg, wd).unwrap(),
    );
    max_rel_err(&analytic, &numeric, 1e-6)
}

/// Random reference set with at least `k + 1` members per class, plus queries.
pub struct KnnCase {
    pub zq: Array2<f64>,
    pub zr: Array2<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub k: usize,
}

pub fn knn_case(seed: u64) -> KnnCase {
    let mut r = rng(seed);
    let classes = r.gen_range(2..=5);
    let k = r.gen_range(1..=4);
    let nr = r.gen_range(classes * (k + 1)..=200);
    let nq = r.gen_range(1..=40);
    let dim = r.gen_range(1..=5);
    // Integer coordinates make exact distance ties common.
    let integral = r.gen_bool(0.3);
    let mut draw = |rows| {
        let m = random_matrix(&mut r, rows, dim, 3.0);
        if integral {
            m.mapv(f64::round)
        } else {
            m
        }
    };
    let zq = draw(nq);
    let zr = draw(nr);
    let labels = random_labels(&mut rng(seed + 1), nr, classes, k + 1);
    KnnCase {
        zq,
        zr,
        labels,
        classes,
        k,
    }
}
