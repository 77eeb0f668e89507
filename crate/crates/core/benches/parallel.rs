//! Batch work with the rayon pool against the same work confined to one
//! thread. Build with `--no-default-features` to time the plain-iterator
//! fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use std::hint::black_box;
use taskdn_core::channels::{build_channels, DEFAULT_BAND_EDGES};
use taskdn_core::denoiser::{init_network, loss_gradient, AbsentCentroidPolicy, ArchConfig, LossConfig, Params};
use taskdn_core::simulate::{osem_reconstruct, Geometry, Projector, ReconConfig};
use taskdn_core::{par, Image2D, Image3D, RngStream};

fn batch(n: usize) -> Vec<(Image3D, Image3D, Option<[usize; 3]>)> {
    let mut g = RngStream::new(3, 1).generator();
    (0..n)
        .map(|_| {
            let t = Image3D::from_vec(32, 32, 8, (0..8192).map(|_| g.random_range(0.5..1.5)).collect()).unwrap();
            let x = t.map(|v| v * 1.1);
            (x, t, Some([16, 16, 3]))
        })
        .collect()
}

fn gradient(c: &mut Criterion) {
    let arch = ArchConfig::default();
    let p: Params<f32> = init_network(&arch, RngStream::new(1, 1)).unwrap();
    let cfg = LossConfig {
        lambda: 1.0,
        slice_half_width: 1,
        channels: build_channels(32, &DEFAULT_BAND_EDGES).unwrap(),
        absent_policy: AbsentCentroidPolicy::CanonicalRandom,
    };
    let b = batch(8);
    let mut group = c.benchmark_group("loss_gradient_batch8");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("pool", par::current_num_threads()), |bn| {
        bn.iter(|| black_box(loss_gradient(&p, &b, &cfg).unwrap()))
    });
    group.bench_function(BenchmarkId::new("sequential", 1), |bn| {
        bn.iter(|| par::sequential(|| black_box(loss_gradient(&p, &b, &cfg).unwrap())))
    });
    group.finish();
}

fn reconstruction(c: &mut Criterion) {
    let proj = Projector::new(&Geometry::default(), 64, 64).unwrap();
    let cfg = ReconConfig::default();
    let slices: Vec<_> = (0..8)
        .map(|s| proj.forward(&Image2D::from_fn(64, 64, |x, y| 1.0 + ((x * y + s) % 7) as f64)).unwrap())
        .collect();
    let run = || par::map_slice(&slices, |sino| osem_reconstruct(sino, &proj, &cfg).unwrap().image.sum());
    let mut group = c.benchmark_group("osem_8_slices");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("pool", par::current_num_threads()), |bn| bn.iter(|| black_box(run())));
    group.bench_function(BenchmarkId::new("sequential", 1), |bn| bn.iter(|| par::sequential(|| black_box(run()))));
    group.finish();
}

criterion_group!(benches, gradient, reconstruction);
criterion_main!(benches);
