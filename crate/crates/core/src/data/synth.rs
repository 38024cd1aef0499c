//! Procedural multispectral scenes.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::filter::blur_plane;
use crate::error::{FameError, Result};
use crate::tensor::{Shape, Tensor};

/// Amplitude of the pan-only fine detail.
pub const PAN_DETAIL: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Recipe {
    Gradients,
    Textures,
    Edges,
    Mixed,
}

impl Recipe {
    pub const ALL: [Recipe; 4] = [Recipe::Gradients, Recipe::Textures, Recipe::Edges, Recipe::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::Gradients => "gradients",
            Recipe::Textures => "textures",
            Recipe::Edges => "edges",
            Recipe::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = FameError;

    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| FameError::config("recipe", format!("`{s}` is not one of gradients, textures, edges, mixed")))
    }
}

/// A ground-truth multispectral image and its panchromatic companion.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// `(1, B, H, W)` in `[0, 1]`.
    pub hrms: Tensor<f32>,
    /// `(1, 1, H, W)` in `[0, 1]`.
    pub pan: Tensor<f32>,
    pub seed: u64,
    pub recipe: Recipe,
}

/// Relative spectral response of each band in the pan channel.
pub fn pan_weights(bands: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..bands)
        .map(|b| 1.0 - 0.5 * ((b as f64 + 0.5) / bands as f64 - 0.5).abs())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

struct Canvas {
    size: usize,
    bands: Vec<Vec<f64>>,
}

impl Canvas {
    fn new(size: usize, bands: usize) -> Self {
        Canvas { size, bands: vec![vec![0.0; size * size]; bands] }
    }

    fn coords(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let s = self.size as f64;
        (0..self.size * self.size).map(move |i| (i, (i % self.size) as f64 / s, (i / self.size) as f64 / s))
    }
}

/// Zero-mean, unit-variance Gaussian-filtered white noise.
fn smooth_noise(rng: &mut ChaCha8Rng, size: usize, sigma: f64) -> Vec<f64> {
    let white: Vec<f64> = (0..size * size).map(|_| rng.sample(StandardNormal)).collect();
    let mut field = blur_plane(&white, size, size, sigma, (3.0 * sigma).ceil() as usize);
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let std = (field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt().max(1e-12);
    field.iter_mut().for_each(|v| *v = (*v - mean) / std);
    field
}

/// Band-correlated smooth base: shared linear and radial trends with
/// per-band gain and offset.
fn paint_gradients(c: &mut Canvas, rng: &mut ChaCha8Rng) {
    let (gx, gy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let (cx, cy) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
    let radius: f64 = rng.random_range(0.2..0.6);
    let bump: f64 = rng.random_range(-1.0..1.0);
    let base: Vec<f64> = c
        .coords()
        .map(|(_, x, y)| {
            let r2 = (x - cx).powi(2) + (y - cy).powi(2);
            0.5 * (gx * (x - 0.5) + gy * (y - 0.5)) + 0.4 * bump * (-r2 / (2.0 * radius * radius)).exp()
        })
        .collect();
    for band in &mut c.bands {
        let gain: f64 = rng.random_range(0.4..0.9);
        let offset: f64 = rng.random_range(0.3..0.6);
        for (v, b) in band.iter_mut().zip(&base) {
            *v += offset + gain * 0.5 * b;
        }
    }
}

/// Filtered noise shared across bands plus a weaker per-band component.
fn paint_texture(c: &mut Canvas, rng: &mut ChaCha8Rng, amplitude: f64) {
    let sigma = rng.random_range(0.8..2.5);
    let shared = smooth_noise(rng, c.size, sigma);
    let size = c.size;
    for band in &mut c.bands {
        let gain: f64 = rng.random_range(0.7..1.1);
        let own = smooth_noise(rng, size, sigma);
        for ((v, s), o) in band.iter_mut().zip(&shared).zip(&own) {
            *v += amplitude * (gain * s + 0.3 * o);
        }
    }
}

/// Hard-edged rectangles, discs and half-planes with per-band colours.
fn paint_shapes(c: &mut Canvas, rng: &mut ChaCha8Rng, count: usize) {
    for _ in 0..count {
        let colour: Vec<f64> = (0..c.bands.len()).map(|_| rng.random_range(0.1..0.9)).collect();
        let kind = rng.random_range(0..3);
        let (px, py) = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
        let (sx, sy): (f64, f64) = (rng.random_range(0.05..0.3), rng.random_range(0.05..0.3));
        let angle = rng.random_range(0.0..PI);
        let inside = |x: f64, y: f64| match kind {
            0 => (x - px).abs() < sx && (y - py).abs() < sy,
            1 => (x - px).powi(2) + (y - py).powi(2) < sx * sx,
            _ => (x - px) * angle.cos() + (y - py) * angle.sin() > 0.0,
        };
        let hits: Vec<usize> = c.coords().filter(|&(_, x, y)| inside(x, y)).map(|(i, _, _)| i).collect();
        for (band, &col) in c.bands.iter_mut().zip(&colour) {
            for &i in &hits {
                band[i] = col;
            }
        }
    }
}

/// Deterministic scene for `seed`. `size` must be at least 128 and a
/// multiple of 4.
pub fn generate_synthetic_scene(seed: u64, size: usize, recipe: Recipe, bands: usize) -> Result<Scene> {
    if size < 128 || size % 4 != 0 {
        return Err(FameError::config("size", format!("must be >= 128 and a multiple of 4, got {size}")));
    }
    if bands == 0 {
        return Err(FameError::config("bands", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canvas = Canvas::new(size, bands);
    match recipe {
        Recipe::Gradients => paint_gradients(&mut canvas, &mut rng),
        Recipe::Textures => {
            paint_gradients(&mut canvas, &mut rng);
            let amp = rng.random_range(0.05..0.12);
            paint_texture(&mut canvas, &mut rng, amp);
        }
        Recipe::Edges => {
            canvas.bands.iter_mut().for_each(|b| b.fill(0.5));
            let count = rng.random_range(4..10);
            paint_shapes(&mut canvas, &mut rng, count);
        }
        Recipe::Mixed => {
            paint_gradients(&mut canvas, &mut rng);
            let count = rng.random_range(0..8);
            paint_shapes(&mut canvas, &mut rng, count);
            let amp = 0.12 * rng.random_range(0.0f64..1.0).powi(2);
            paint_texture(&mut canvas, &mut rng, amp);
        }
    }
    let weights = pan_weights(bands);
    let detail = smooth_noise(&mut rng, size, 0.5);
    let mut pan = vec![0.0; size * size];
    for (band, w) in canvas.bands.iter_mut().zip(&weights) {
        band.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        for (p, v) in pan.iter_mut().zip(band.iter()) {
            *p += w * v;
        }
    }
    for (p, d) in pan.iter_mut().zip(&detail) {
        *p = (*p + PAN_DETAIL * d).clamp(0.0, 1.0);
    }
    let hrms = Tensor::from_vec(
        Shape::new(1, bands, size, size),
        canvas.bands.concat().into_iter().map(|v| v as f32).collect(),
    )?;
    let pan = Tensor::from_vec(Shape::new(1, 1, size, size), pan.into_iter().map(|v| v as f32).collect())?;
    Ok(Scene { hrms, pan, seed, recipe })
}
