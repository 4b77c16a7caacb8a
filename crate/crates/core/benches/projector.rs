use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use saw_recon::geometry::{half_scan_views, make_geometry, Geometry, GeometryConfig, ViewSubset};
use saw_recon::par::with_threads;
use saw_recon::phantom::{rasterize, PhantomSpec};
use saw_recon::{back_project, compute_mask, forward_project, masked_back_project};

fn bench_geometry() -> Geometry {
    make_geometry(GeometryConfig {
        volume_dims: [32, 32, 32],
        voxel_size: [4.0; 3],
        num_views: 36,
        ..GeometryConfig::default()
    })
    .unwrap()
}

/// Each kernel on one worker and on the default pool. Build with
/// `--no-default-features` to measure the rayon-free code path.
fn projections(c: &mut Criterion) {
    let g = bench_geometry();
    let full = ViewSubset::full(&g);
    let half = half_scan_views(&g, 0).unwrap();
    let x = rasterize(&PhantomSpec::static_default(), 0.0, &g).unwrap();
    let s = forward_project(&x, &g, &full).unwrap();
    let mask = compute_mask(&g, &half, 0.0).unwrap();

    let mut group = c.benchmark_group("projector");
    group.sample_size(10);
    for threads in [1usize, 0] {
        let label = if threads == 1 { "sequential" } else { "parallel" };
        group.bench_with_input(BenchmarkId::new("forward", label), &threads, |b, &t| {
            b.iter(|| with_threads(t, || forward_project(&x, &g, &full).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("back", label), &threads, |b, &t| {
            b.iter(|| with_threads(t, || back_project(&s, &g, &full).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("masked_back", label), &threads, |b, &t| {
            b.iter(|| with_threads(t, || masked_back_project(&s, &g, &half, &mask).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("mask", label), &threads, |b, &t| {
            b.iter(|| with_threads(t, || compute_mask(&g, &half, 0.0).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, projections);
criterion_main!(benches);
