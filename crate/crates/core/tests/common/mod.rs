//! Brute-force references shared by the integration tests.
#![allow(dead_code)]

use fame::tensor::{Shape, Tensor};

/// SSIM of one band pair from a dense 2-D Gaussian window evaluated at
/// every fully contained position.
pub fn ssim_direct(a: &[f64], b: &[f64], h: usize, w: usize, window: usize) -> f64 {
    let r = (window / 2) as isize;
    let sigma = 1.5f64;
    let mut kernel = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            kernel.push((-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (c1, c2) = (1e-4, 9e-4);
    let mut acc = 0.0;
    let mut count = 0;
    for top in 0..=h - window {
        for left in 0..=w - window {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..window {
                for j in 0..window {
                    let k = kernel[i * window + j];
                    let (x, y) = (a[(top + i) * w + left + j], b[(top + i) * w + left + j]);
                    mx += k * x;
                    my += k * y;
                    xx += k * x * x;
                    yy += k * y * y;
                    xy += k * x * y;
                }
            }
            let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Universal quality index averaged over `window²` windows placed every
/// `stride` pixels, each computed from two-pass sample statistics.
pub fn q_direct(x: &[f64], y: &[f64], h: usize, w: usize, window: usize, stride: usize) -> f64 {
    let mut acc = 0.0;
    let mut count = 0;
    let mut top = 0;
    while top + window <= h {
        let mut left = 0;
        while left + window <= w {
            let cell = |v: &[f64]| -> Vec<f64> {
                (0..window).flat_map(|i| (0..window).map(move |j| (i, j))).map(|(i, j)| v[(top + i) * w + left + j]).collect()
            };
            let (a, b) = (cell(x), cell(y));
            let n = a.len() as f64;
            let ma = a.iter().sum::<f64>() / n;
            let mb = b.iter().sum::<f64>() / n;
            let va = a.iter().map(|v| (v - ma).powi(2)).sum::<f64>() / (n - 1.0);
            let vb = b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / (n - 1.0);
            let cab = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>() / (n - 1.0);
            acc += 4.0 * cab * ma * mb / ((va + vb) * (ma * ma + mb * mb));
            count += 1;
            left += stride;
        }
        top += stride;
    }
    acc / count as f64
}

/// Deterministic pseudo-random values in `[lo, hi)`.
pub fn noise(seed: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            lo + (hi - lo) * ((s >> 11) as f64 / (1u64 << 53) as f64)
        })
        .collect()
}

pub fn random_image(seed: u64, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_vec(shape, noise(seed, shape.numel(), lo, hi)).unwrap()
}
