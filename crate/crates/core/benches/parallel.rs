//! Sequential vs rayon execution of the hot paths, plus the unique-intensity cache.
//!
//! `cargo bench -p esn-segment` runs both strategies; building with `--no-default-features`
//! makes the parallel rows fall back to the sequential code.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use esn_segment::clustering::{fuzzy_cmeans, kmeans, FcmParams, KMeansParams};
use esn_segment::features::{extract_features, ExtractOptions};
use esn_segment::image_io::make_synthetic_benchmark;
use esn_segment::reservoir::generate_reservoir;
use esn_segment::Execution;

const STRATEGIES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn extraction(c: &mut Criterion) {
    let img = make_synthetic_benchmark(256, 256, 1).unwrap();
    let res = generate_reservoir(10, 1, 0.9, 42).unwrap();
    let mut g = c.benchmark_group("extract_features");
    g.sample_size(10);
    for (name, execution) in STRATEGIES {
        for memoize in [true, false] {
            let opts = ExtractOptions {
                memoize,
                execution,
                ..ExtractOptions::default()
            };
            let id = BenchmarkId::new(name, if memoize { "cached" } else { "uncached" });
            g.bench_with_input(id, &opts, |b, opts| {
                b.iter(|| extract_features(&res, black_box(&img), opts).unwrap())
            });
        }
    }
    g.finish();
}

fn clustering(c: &mut Criterion) {
    let img = make_synthetic_benchmark(256, 256, 1).unwrap();
    let res = generate_reservoir(10, 1, 0.9, 42).unwrap();
    let fm = extract_features(&res, &img, &ExtractOptions::default()).unwrap();
    let mut g = c.benchmark_group("clustering");
    g.sample_size(10);
    for (name, execution) in STRATEGIES {
        let km = KMeansParams {
            k: 3,
            seed: 42,
            max_iter: 300,
            tol: 1e-9,
            restarts: 10,
            execution,
        };
        g.bench_function(BenchmarkId::new("kmeans_10d", name), |b| {
            b.iter(|| kmeans(black_box(fm.data()), fm.n_features(), &km).unwrap())
        });
        let fcm = FcmParams {
            k: 3,
            execution,
            ..FcmParams::default()
        };
        g.bench_function(BenchmarkId::new("fcm_intensity", name), |b| {
            b.iter(|| fuzzy_cmeans(black_box(img.intensities()), 1, &fcm).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, extraction, clustering);
criterion_main!(benches);
