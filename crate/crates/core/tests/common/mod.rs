#![allow(dead_code)]

use gsc_core::GrayImage;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut Xoshiro256PlusPlus, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

/// Smooth structure plus a few edges, values roughly in [20, 235].
pub fn synthetic(h: usize, w: usize) -> GrayImage {
    GrayImage::from_fn(h, w, |r, c| {
        let (rf, cf) = (r as f64, c as f64);
        let mut v = 128.0 + 50.0 * (rf / 9.0).sin() * (cf / 13.0).cos() + 25.0 * ((rf + 2.0 * cf) / 17.0).sin();
        if (r / 16 + c / 16) % 2 == 0 {
            v += 30.0;
        }
        if c > w / 2 && r < h / 3 {
            v -= 40.0;
        }
        v.clamp(0.0, 255.0)
    })
}

pub fn add_noise(img: &GrayImage, sigma: f64, seed: u64) -> GrayImage {
    let mut r = rng(seed);
    GrayImage::new(
        img.height(),
        img.width(),
        img.data()
            .iter()
            .map(|&v| v + sigma * r.sample::<f64, _>(StandardNormal))
            .collect(),
    )
    .unwrap()
}

/// Index of the smallest value of `0.5 (g - a)^2 + w |a|^p` over `points`
/// evenly spaced values of `a` in `[0, |g|]`, signed like `g`.
pub fn grid_minimizer(g: f64, w: f64, p: f64, points: usize) -> f64 {
    let ga = g.abs();
    let mut best = (0.0, f64::INFINITY);
    for k in 0..points {
        let a = ga * k as f64 / (points - 1) as f64;
        let f = 0.5 * (ga - a) * (ga - a) + w * a.powf(p);
        if f < best.1 {
            best = (a, f);
        }
    }
    g.signum() * best.0
}
