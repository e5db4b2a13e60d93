//! Throughput benchmarks for the hot paths: Bernoulli field generation,
//! closure propagation in two and three dimensions, and the beams process.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use bootperc_core::beams::beams_process;
use bootperc_core::engine::{closure, GridBox};
use bootperc_core::family::{ThresholdFamily, UpdateFamily};
use bootperc_core::sampler::{sample_configuration, BernoulliSeeding};

fn bench_sampling(c: &mut Criterion) {
    let grid = GridBox::cube(2, 256).unwrap();
    c.bench_function("sample_256x256", |b| {
        let mut trial = 0u64;
        b.iter(|| {
            trial += 1;
            let seeding = BernoulliSeeding::new(0.1, 99, trial).unwrap();
            black_box(sample_configuration(&grid, &seeding))
        })
    });
}

fn bench_closure_2d(c: &mut Criterion) {
    let family: UpdateFamily = ThresholdFamily::from_radii(&[1, 1], 2).unwrap().into();
    let grid = GridBox::cube(2, 256).unwrap();
    // near-critical density: large cascades without always filling
    let seeding = BernoulliSeeding::new(0.05, 7, 0).unwrap();
    let config = sample_configuration(&grid, &seeding);
    c.bench_function("closure_nn2_256x256", |b| {
        b.iter(|| black_box(closure(&family, &config).unwrap()))
    });
}

fn bench_closure_3d(c: &mut Criterion) {
    let family: UpdateFamily = ThresholdFamily::from_radii(&[1, 1, 2], 4).unwrap().into();
    let grid = GridBox::cube(3, 32).unwrap();
    let seeding = BernoulliSeeding::new(0.16, 7, 0).unwrap();
    let config = sample_configuration(&grid, &seeding);
    c.bench_function("closure_aniso_32x32x32", |b| {
        b.iter(|| black_box(closure(&family, &config).unwrap()))
    });
}

fn bench_beams_process(c: &mut Criterion) {
    let family = ThresholdFamily::from_radii(&[1, 1, 1], 2).unwrap();
    let grid = GridBox::cube(3, 16).unwrap();
    let seeding = BernoulliSeeding::new(0.02, 3, 0).unwrap();
    let config = sample_configuration(&grid, &seeding);
    c.bench_function("beams_process_16cube", |b| {
        b.iter(|| black_box(beams_process(&family, &config).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_sampling,
    bench_closure_2d,
    bench_closure_3d,
    bench_beams_process
);
criterion_main!(benches);
