#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use firecast_core::coupling::{grid_to_mesh_edges, mesh_to_grid_edges, DEFAULT_RADIUS_FACTOR};
use firecast_core::data::RegionMask;
use firecast_core::geomesh::{build_lam_mesh, build_multimesh, LamConfig};
use firecast_core::GridSpec;

fn bench_meshes(c: &mut Criterion) {
    let mut g = c.benchmark_group("mesh");
    g.sample_size(10);
    for level in [3, 6] {
        g.bench_function(format!("multimesh_level{level}"), |b| {
            b.iter(|| build_multimesh(black_box(level)).unwrap())
        });
    }
    let grid = GridSpec::global(64, 128);
    let region = RegionMask::rectangle("box", grid, (30.0, 45.0), (-10.0, 30.0));
    g.bench_function("lam_default", |b| {
        b.iter(|| build_lam_mesh(black_box(&region), &LamConfig::default()).unwrap())
    });
    g.finish();
}

fn bench_coupling(c: &mut Criterion) {
    let mesh = build_multimesh(3).unwrap();
    let grid = GridSpec::global(64, 128);
    c.bench_function("g2m_64x128_level3", |b| {
        b.iter(|| grid_to_mesh_edges(black_box(&grid), &mesh, DEFAULT_RADIUS_FACTOR).unwrap())
    });
    c.bench_function("m2g_64x128_level3", |b| b.iter(|| mesh_to_grid_edges(black_box(&grid), &mesh).unwrap()));
}

criterion_group!(benches, bench_meshes, bench_coupling);
criterion_main!(benches);
