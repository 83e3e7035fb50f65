use criterion::{criterion_group, criterion_main, Criterion};
use gsc_core::grouping::{build_layout, match_patches};
use gsc_core::operators::{apply_mask, random_mask};
use gsc_core::presets::{find_preset, Norm};
use gsc_core::prox::gst;
use gsc_core::restoration::{restore, StopRule};
use gsc_core::{GrayImage, Observation};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use std::hint::black_box;

fn test_image(n: usize) -> GrayImage {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(1);
    GrayImage::from_fn(n, n, |y, x| {
        128.0 + 60.0 * ((y as f64) / 7.0).sin() * ((x as f64) / 11.0).cos() + r.random_range(-5.0..5.0)
    })
}

fn kernels(c: &mut Criterion) {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(2);
    let group = DMatrix::from_fn(64, 60, |_, _| r.random_range(-50.0..50.0));
    c.bench_function("svd 64x60", |b| b.iter(|| black_box(&group).clone().svd(true, true)));

    let codes: Vec<f64> = (0..60).map(|_| r.random_range(-40.0..40.0)).collect();
    c.bench_function("gst 60 coefficients", |b| {
        b.iter(|| codes.iter().map(|&g| gst(g, 3.0, 0.45, 2).unwrap()).sum::<f64>())
    });

    let preset = find_preset("miss80").unwrap();
    let img = test_image(128);
    let grouping = preset.grouping();
    c.bench_function("block match one reference", |b| {
        b.iter(|| match_patches(black_box(&img), &grouping, (60, 60)).unwrap())
    });
    c.bench_function("layout 128x128", |b| b.iter(|| build_layout(black_box(&img), &grouping).unwrap()));

    let mask = random_mask(128, 128, 0.8, 3).unwrap();
    let y = apply_mask(&img, &mask).unwrap();
    let mut cfg = preset.config(Norm::WLp);
    cfg.max_iters = 1;
    cfg.stop = StopRule::MaxIters;
    let mut slow = c.benchmark_group("admm");
    slow.sample_size(10);
    slow.bench_function("one iteration 128x128", |b| {
        b.iter(|| restore(Observation::Mask { y: &y, mask: &mask }, &cfg, None).unwrap())
    });
    slow.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
