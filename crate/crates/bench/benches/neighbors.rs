use ccml_bench::labeled_points;
use ccml_core::classify::ccknn_classify;
use ccml_core::knn::{knn_per_class, pairwise_sqdist};
use ccml_core::CcknnOptions;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn pairwise(c: &mut Criterion) {
    let mut group = c.benchmark_group("pairwise_sqdist");
    for n in [100, 500, 2000] {
        let (x, _) = labeled_points(n, 32, 3, 0);
        group.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| pairwise_sqdist(x.view(), x.view()).unwrap())
        });
    }
    group.finish();
}

fn per_class(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn_per_class");
    let (reference, labels) = labeled_points(2000, 32, 10, 1);
    let (queries, _) = labeled_points(200, 32, 10, 2);
    for k in [1, 5, 20] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| knn_per_class(queries.view(), reference.view(), &labels, 10, k, None).unwrap())
        });
    }
    group.finish();
}

fn ccknn(c: &mut Criterion) {
    let (reference, labels) = labeled_points(2000, 32, 10, 3);
    let (queries, _) = labeled_points(200, 32, 10, 4);
    let opts = CcknnOptions::default();
    c.bench_function("ccknn_classify/k3", |b| {
        b.iter(|| ccknn_classify(queries.view(), reference.view(), &labels, 10, 3, &opts).unwrap())
    });
}

criterion_group!(benches, pairwise, per_class, ccknn);
criterion_main!(benches);
