#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use firecast_core::eval::average_precision;
use firecast_core::training::bce_value;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 100_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.05)).collect();
    c.bench_function("average_precision_100k", |b| {
        b.iter(|| average_precision(black_box(&scores), &labels))
    });
    let logits: Vec<f32> = scores.iter().map(|&s| (s * 8.0 - 4.0) as f32).collect();
    let targets: Vec<f32> = labels.iter().map(|&l| l as u8 as f32).collect();
    let mask = vec![true; n];
    c.bench_function("bce_value_100k", |b| b.iter(|| bce_value(black_box(&logits), &targets, &mask)));
}

criterion_group!(benches, bench_metrics);
criterion_main!(benches);
