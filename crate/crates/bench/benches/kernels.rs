use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use playstyle::clean::pca_fit;
use playstyle::cluster::{kmeans, silhouette};
use playstyle::features::extract_features;
use playstyle_bench::{blobs, labels, sessions};

fn bench_kmeans(c: &mut Criterion) {
    let mut g = c.benchmark_group("kmeans");
    for n in [500, 2_000, 10_000] {
        let x = blobs(n, 3, 4, 1);
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| kmeans(black_box(x), 4, 7, 10).unwrap())
        });
    }
    g.finish();
}

fn bench_silhouette(c: &mut Criterion) {
    let mut g = c.benchmark_group("silhouette");
    g.sample_size(10);
    for n in [500, 2_000, 10_000] {
        let x = blobs(n, 3, 4, 2);
        let l = labels(n, 4);
        g.bench_with_input(BenchmarkId::from_parameter(n), &(x, l), |b, (x, l)| {
            b.iter(|| silhouette(black_box(x), black_box(l)).unwrap())
        });
    }
    g.finish();
}

fn bench_pca(c: &mut Criterion) {
    let mut g = c.benchmark_group("pca_fit");
    for dims in [5, 15, 40] {
        let x = blobs(10_000, dims, 3, 3);
        g.bench_with_input(BenchmarkId::from_parameter(dims), &x, |b, x| {
            b.iter(|| pca_fit(black_box(x)).unwrap())
        });
    }
    g.finish();
}

fn bench_features(c: &mut Criterion) {
    let (sessions, specs, cfg) = sessions(2_000, 4);
    c.bench_function("extract_features/2000", |b| {
        b.iter(|| extract_features(black_box(&sessions), &specs, &cfg.window).unwrap())
    });
}

criterion_group!(
    benches,
    bench_kmeans,
    bench_silhouette,
    bench_pca,
    bench_features
);
criterion_main!(benches);
