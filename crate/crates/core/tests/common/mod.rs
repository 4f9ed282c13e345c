#![allow(dead_code)]

use leader_core::{Minutia, MinutiaKind, MinutiaSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f32, hi: f32) -> Tensor {
    let data = (0..h * w * c).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(h, w, c, data).unwrap()
}

pub fn random_kind(rng: &mut ChaCha8Rng) -> MinutiaKind {
    if rng.random_bool(0.5) {
        MinutiaKind::RidgeEnding
    } else {
        MinutiaKind::Bifurcation
    }
}

/// `n` minutiae at distinct pixels with random direction, type and quality.
pub fn random_set(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> MinutiaSet {
    let mut ms: Vec<Minutia> = Vec::with_capacity(n);
    while ms.len() < n {
        let (x, y) = (rng.random_range(0..w), rng.random_range(0..h));
        if ms.iter().any(|m| m.x == x && m.y == y) {
            continue;
        }
        let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let kind = random_kind(rng);
        ms.push(Minutia::new(x, y, theta, kind, rng.random_range(0.0..1.0)));
    }
    MinutiaSet::new(w, h, ms).unwrap()
}

/// Concentric sinusoidal ridges with a little curvature, values in [0, 1].
pub fn ridge_image(h: usize, w: usize) -> Tensor {
    let (cy, cx) = (h as f64 * 0.55, w as f64 * 0.45);
    Tensor::from_fn(h, w, 1, |y, x, _| {
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let r = (dx * dx + 1.3 * dy * dy).sqrt();
        (0.5 + 0.45 * (r / 2.8 + 0.3 * (dx / 40.0).sin()).cos()) as f32
    })
}

/// Exhaustive same-padded dilated cross-correlation in f64; also returns
/// the sum of absolute products per output for tolerance scaling.
pub fn conv_oracle(x: &Tensor, k: &leader_core::ConvKernel, dilation: usize) -> (Vec<f64>, Vec<f64>) {
    let (h, w, cin) = x.shape();
    let (s, cout) = (k.size(), k.out_channels());
    let r = (s / 2 * dilation) as isize;
    let mut out = vec![0.0; h * w * cout];
    let mut mag = vec![0.0; h * w * cout];
    for y in 0..h {
        for xx in 0..w {
            for co in 0..cout {
                let mut acc = k.bias().map_or(0.0, |b| b[co] as f64);
                let mut m = acc.abs();
                for ky in 0..s {
                    for kx in 0..s {
                        let sy = y as isize + (ky * dilation) as isize - r;
                        let sx = xx as isize + (kx * dilation) as isize - r;
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            let t = x.get(sy as usize, sx as usize, ci) as f64 * k.weight(ky, kx, ci, co) as f64;
                            acc += t;
                            m += t.abs();
                        }
                    }
                }
                out[(y * w + xx) * cout + co] = acc;
                mag[(y * w + xx) * cout + co] = m;
            }
        }
    }
    (out, mag)
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}
