#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use firecast_core::geomesh::build_multimesh;
use firecast_core::model::{FireCastNet, FireCastNetConfig, MeshGraphs};
use firecast_core::training::{predict_logits, sample_gradients};
use firecast_core::{GridSpec, Tensor};

fn bench_network(c: &mut Criterion) {
    let config = FireCastNetConfig::paper(6);
    let (net, store) = FireCastNet::init::<f32>(&config, 1).unwrap();
    let mesh = build_multimesh(3).unwrap();
    let graphs = MeshGraphs::build(&mesh, &GridSpec::global(64, 128), config.spatial_reduction).unwrap();
    let input = Tensor::from_fn([6, 14, 64, 128], |i| ((i as f32) * 0.001).sin());
    let cells = 64 * 128;
    let target: Arc<[f32]> = (0..cells).map(|i| (i % 7 == 0) as u8 as f32).collect();
    let mask: Arc<[bool]> = (0..cells).map(|_| true).collect();

    let mut g = c.benchmark_group("firecastnet_ts6_64x128_level3");
    g.sample_size(10);
    g.bench_function("forward", |b| {
        b.iter(|| predict_logits(&net, &store, &graphs, black_box(input.clone())).unwrap())
    });
    g.bench_function("forward_backward", |b| {
        b.iter(|| {
            sample_gradients(&net, &store, &graphs, black_box(input.clone()), target.clone(), mask.clone()).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, bench_network);
criterion_main!(benches);
