//! Separable Gaussian filtering and Wald-protocol degradation.

use crate::error::{FameError, Result};
use crate::tensor::{Shape, Tensor};

/// Half-sample symmetric reflection: `-1 -> 0`, `n -> n - 1`.
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j as usize
}

/// Normalized taps `exp(-t²/2σ²)` for `t ∈ [-radius, radius]`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let taps: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

/// Kernel-weighted sum around fractional position `pos` along one line.
fn tap_line(line: impl Fn(usize) -> f64, n: usize, centre: isize, kernel: &[f64]) -> f64 {
    let r = (kernel.len() / 2) as isize;
    kernel
        .iter()
        .enumerate()
        .map(|(t, k)| k * line(reflect(centre + t as isize - r, n)))
        .sum()
}

/// Gaussian blur of one `h×w` plane with symmetric padding.
pub fn blur_plane(x: &[f64], h: usize, w: usize, sigma: f64, radius: usize) -> Vec<f64> {
    let k = gaussian_kernel(sigma, radius);
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for c in 0..w {
            rows[y * w + c] = tap_line(|j| x[y * w + j], w, c as isize, &k);
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for c in 0..w {
            out[y * w + c] = tap_line(|j| rows[j * w + c], h, y as isize, &k);
        }
    }
    out
}

/// Blurred-image positions averaged into low-resolution sample `i`: the
/// centre of the `factor`-wide footprint, split over two pixels when
/// `factor` is even.
pub fn sample_positions(i: usize, factor: usize) -> Vec<isize> {
    let start = (i * factor) as isize;
    if factor % 2 == 1 {
        vec![start + (factor as isize - 1) / 2]
    } else {
        vec![start + factor as isize / 2 - 1, start + factor as isize / 2]
    }
}

/// σ of the degradation blur.
pub fn wald_sigma(factor: usize) -> f64 {
    factor as f64 / 2.0
}

/// Blur (σ = f/2, width 2f + 1, symmetric padding) then decimate by `f`.
pub fn degrade_plane(x: &[f64], h: usize, w: usize, factor: usize) -> Vec<f64> {
    let k = gaussian_kernel(wald_sigma(factor), factor);
    let (lh, lw) = (h / factor, w / factor);
    let mut cols = vec![0.0; h * lw];
    for y in 0..h {
        for j in 0..lw {
            let pos = sample_positions(j, factor);
            let s: f64 = pos.iter().map(|&p| tap_line(|c| x[y * w + c], w, p, &k)).sum();
            cols[y * lw + j] = s / pos.len() as f64;
        }
    }
    let mut out = vec![0.0; lh * lw];
    for i in 0..lh {
        let pos = sample_positions(i, factor);
        for j in 0..lw {
            let s: f64 = pos.iter().map(|&p| tap_line(|r| cols[r * lw + j], h, p, &k)).sum();
            out[i * lw + j] = s / pos.len() as f64;
        }
    }
    out
}

/// Wald-protocol degradation of a `(1, B, H, W)` image.
pub fn wald_degrade_image(image: &Tensor<f32>, factor: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if factor == 0 || s.h % factor != 0 || s.w % factor != 0 {
        return Err(FameError::shape(
            "wald_degrade",
            format!("factor {factor} does not divide {}x{}", s.h, s.w),
        ));
    }
    let mut data = Vec::with_capacity(s.numel() / (factor * factor));
    for n in 0..s.n {
        for c in 0..s.c {
            let plane: Vec<f64> = image.plane(n, c).iter().map(|&v| v as f64).collect();
            data.extend(degrade_plane(&plane, s.h, s.w, factor).into_iter().map(|v| v as f32));
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, s.h / factor, s.w / factor), data)
}

/// Low-resolution indices along an axis of `lr` samples whose blur
/// footprint lies entirely inside the high-resolution extent.
pub fn interior_range(lr: usize, factor: usize) -> std::ops::Range<usize> {
    let hr = (lr * factor) as isize;
    let r = factor as isize;
    let fits = |i: usize| {
        let pos = sample_positions(i, factor);
        pos[0] - r >= 0 && pos[pos.len() - 1] + r < hr
    };
    let lo = (0..lr).find(|&i| fits(i)).unwrap_or(lr);
    let hi = (0..lr).rev().find(|&i| fits(i)).map_or(lo, |i| i + 1);
    lo..hi.max(lo)
}
