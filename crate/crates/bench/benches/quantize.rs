use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use qsq_bench::{conv_tensor, gaussian};
use qsq_core::pipeline::{quantize_tensor, QuantizeOptions};
use qsq_core::quantizer::{quantize_vector, AssignMode, Phi, QuantConfig, SearchGrid};

fn vectors(c: &mut Criterion) {
    let mut g = c.benchmark_group("quantize_vector");
    for len in [16, 64, 512] {
        let v = gaussian(len, 7);
        for mode in [AssignMode::SigmaThreshold, AssignMode::NearestLevel] {
            let cfg = QuantConfig {
                mode,
                ..QuantConfig::default()
            };
            g.bench_with_input(BenchmarkId::new(format!("{mode:?}"), len), &v, |b, v| {
                b.iter(|| quantize_vector(black_box(v), &cfg).unwrap())
            });
        }
    }
    g.finish();
}

fn layers(c: &mut Criterion) {
    let t = conv_tensor("conv2", [50, 20, 5, 5], 3);
    let mut g = c.benchmark_group("quantize_layer");
    for phi in Phi::ALL {
        let opts = QuantizeOptions {
            config: QuantConfig {
                phi,
                ..QuantConfig::default()
            },
            ..QuantizeOptions::default()
        };
        g.bench_function(BenchmarkId::new("fixed", phi), |b| {
            b.iter(|| quantize_tensor(black_box(&t), &opts).unwrap())
        });
    }
    let opts = QuantizeOptions {
        search: Some(SearchGrid::default()),
        ..QuantizeOptions::default()
    };
    g.bench_function("search_default_grid", |b| {
        b.iter(|| quantize_tensor(black_box(&t), &opts).unwrap())
    });
    g.finish();
}

criterion_group!(benches, vectors, layers);
criterion_main!(benches);
