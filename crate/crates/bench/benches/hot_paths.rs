//! Benchmarks for the per-iteration hot paths: splat rendering forward and
//! backward, control-neighborhood queries, and surface extraction.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gsavatar_bench::{noisy_sphere_grid, orbit_camera, scattered_positions, SplatCloud};
use gsavatar_core::control::{neighborhoods, select_controls, SpatialIndex};
use gsavatar_core::geometry::extract_surface;
use gsavatar_core::render::{rasterize, rasterize_backward};
use gsavatar_core::ControlConfig;
use nalgebra::Vector3;

fn bench_rasterize(c: &mut Criterion) {
    let cloud = SplatCloud::random(200, 11);
    let camera = orbit_camera(64, 64);
    let background = Vector3::zeros();

    c.bench_function("rasterize/200_splats_64x64", |b| {
        b.iter(|| black_box(rasterize(cloud.inputs(), &camera, background).unwrap()))
    });

    let d_rgb = vec![1.0; 64 * 64 * 3];
    let d_alpha = vec![0.0; 64 * 64];
    c.bench_function("rasterize_backward/200_splats_64x64", |b| {
        b.iter(|| {
            black_box(
                rasterize_backward(cloud.inputs(), &camera, background, &d_rgb, &d_alpha)
                    .unwrap(),
            )
        })
    });
}

fn bench_neighborhoods(c: &mut Criterion) {
    let positions = scattered_positions(10_000, 12);
    let delta: Vec<f64> = (0..positions.len())
        .map(|i| if i % 50 == 0 { 1.0 } else { 0.0 })
        .collect();
    let cfg = ControlConfig::default();
    let controls = select_controls(&delta, cfg.tau_control);

    c.bench_function("spatial_index/build_10k", |b| {
        b.iter(|| black_box(SpatialIndex::build(&positions, cfg.radius_r)))
    });

    let index = SpatialIndex::build(&positions, cfg.radius_r);
    c.bench_function("neighborhoods/10k_points_200_controls", |b| {
        b.iter(|| black_box(neighborhoods(&positions, &controls, &cfg, &index)))
    });
}

fn bench_surface_extraction(c: &mut Criterion) {
    let grid = noisy_sphere_grid(32);
    c.bench_function("extract_surface/res_32", |b| {
        b.iter(|| black_box(extract_surface(&grid)))
    });
}

criterion_group!(
    benches,
    bench_rasterize,
    bench_neighborhoods,
    bench_surface_extraction
);
criterion_main!(benches);
