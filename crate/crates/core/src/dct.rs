//! Unnormalized 2-D DCT-II, its inverse, and ground-truth frequency masks.
//!
//! The forward transform is
//! `D(u,v) = Σ_h Σ_w x[h,w] · cos(πu(h+½)/H) · cos(πv(w+½)/W)`
//! with no scale factors; [`idct2`] carries the compensating `2/N` per axis
//! with the DC term halved.

use std::f64::consts::PI;

use crate::error::{FameError, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Coefficients of every channel of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    /// One row-major `height × width` block per channel.
    pub coefficients: Vec<Vec<f64>>,
}

impl Spectrum {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Spectrum {
            height,
            width,
            coefficients: vec![vec![0.0; height * width]; channels],
        }
    }

    /// Coefficients rescaled to the orthonormal DCT-II, under which the
    /// transform preserves the sum of squares.
    pub fn orthonormalized(&self) -> Spectrum {
        let su = |u: usize, n: usize| {
            if u == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            }
        };
        let coefficients = self
            .coefficients
            .iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .map(|(i, &d)| {
                        d * su(i / self.width, self.height) * su(i % self.width, self.width)
                    })
                    .collect()
            })
            .collect();
        Spectrum {
            height: self.height,
            width: self.width,
            coefficients,
        }
    }
}

/// `table[k * n + i] = cos(πk(i+½)/n)`.
fn cosine_table(n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n * n);
    for k in 0..n {
        for i in 0..n {
            t.push((PI * k as f64 * (i as f64 + 0.5) / n as f64).cos());
        }
    }
    t
}

/// Separable unnormalized DCT-II of one `h × w` plane: rows, then columns.
pub fn dct2_plane(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let cw = cosine_table(w);
    let ch = cosine_table(h);
    let mut rows = vec![0.0; h * w];
    for r in 0..h {
        let src = &x[r * w..(r + 1) * w];
        for v in 0..w {
            let basis = &cw[v * w..(v + 1) * w];
            rows[r * w + v] = src.iter().zip(basis).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for u in 0..h {
        let basis = &ch[u * h..(u + 1) * h];
        for (r, &b) in basis.iter().enumerate() {
            let src = &rows[r * w..(r + 1) * w];
            for (o, &s) in out[u * w..(u + 1) * w].iter_mut().zip(src) {
                *o += b * s;
            }
        }
    }
    out
}

/// Inverse of [`dct2_plane`].
pub fn idct2_plane(d: &[f64], h: usize, w: usize) -> Vec<f64> {
    let cw = cosine_table(w);
    let ch = cosine_table(h);
    let wu = |k: usize, n: usize| {
        if k == 0 {
            1.0 / n as f64
        } else {
            2.0 / n as f64
        }
    };
    // columns: t[r, v] = Σ_u wu(u) D[u, v] cos(πu(r+½)/h)
    let mut t = vec![0.0; h * w];
    for u in 0..h {
        let scale = wu(u, h);
        let src = &d[u * w..(u + 1) * w];
        for r in 0..h {
            let b = ch[u * h + r] * scale;
            for (o, &s) in t[r * w..(r + 1) * w].iter_mut().zip(src) {
                *o += b * s;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let src = &t[r * w..(r + 1) * w];
        for c in 0..w {
            out[r * w + c] = src
                .iter()
                .enumerate()
                .map(|(v, &s)| s * wu(v, w) * cw[v * w + c])
                .sum();
        }
    }
    out
}

fn single_image<T: Scalar>(op: &'static str, image: &Tensor<T>) -> Result<Shape> {
    let s = image.shape();
    if s.n != 1 || s.h == 0 || s.w == 0 {
        return Err(FameError::shape(
            op,
            format!("expected one non-empty image, got {s}"),
        ));
    }
    Ok(s)
}

/// Per-channel transform of a `(1, C, H, W)` image.
pub fn dct2<T: Scalar>(image: &Tensor<T>) -> Result<Spectrum> {
    let s = single_image("dct2", image)?;
    let coefficients = (0..s.c)
        .map(|c| {
            let plane: Vec<f64> = image.plane(0, c).iter().map(|v| v.as_f64()).collect();
            dct2_plane(&plane, s.h, s.w)
        })
        .collect();
    Ok(Spectrum {
        height: s.h,
        width: s.w,
        coefficients,
    })
}

pub fn idct2(spectrum: &Spectrum) -> Result<Tensor<f64>> {
    let (h, w) = (spectrum.height, spectrum.width);
    if h == 0 || w == 0 {
        return Err(FameError::shape("idct2", "empty spectrum"));
    }
    let mut data = Vec::with_capacity(spectrum.coefficients.len() * h * w);
    for c in &spectrum.coefficients {
        data.extend(idct2_plane(c, h, w));
    }
    Tensor::from_vec(Shape::new(1, spectrum.coefficients.len(), h, w), data)
}

/// Which upper-left block of the spectrum counts as low frequency.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LowFrequencyRegion {
    /// `u + v < r·(H + W)`: the anti-diagonal triangle of zig-zag order.
    Triangle,
    /// `u < r·H` and `v < r·W`.
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskParams {
    pub low_freq_radius_fraction: f64,
    pub magnitude_quantile: f64,
    /// Absolute floor on the high-frequency response; pixels below it are
    /// low frequency whatever the quantile says.
    pub min_response: f64,
    pub region: LowFrequencyRegion,
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams {
            low_freq_radius_fraction: 0.1,
            magnitude_quantile: 0.5,
            min_response: 0.01,
            region: LowFrequencyRegion::Triangle,
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.low_freq_radius_fraction) {
            return Err(FameError::Contract(format!(
                "radius fraction must lie in (0, 1), got {}",
                self.low_freq_radius_fraction
            )));
        }
        if !open(self.magnitude_quantile) {
            return Err(FameError::Contract(format!(
                "magnitude quantile must lie in (0, 1), got {}",
                self.magnitude_quantile
            )));
        }
        if !(self.min_response >= 0.0) {
            return Err(FameError::Contract(
                "response floor must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn is_low(&self, u: usize, v: usize, h: usize, w: usize) -> bool {
        let r = self.low_freq_radius_fraction;
        match self.region {
            LowFrequencyRegion::Triangle => ((u + v) as f64) < r * (h + w) as f64,
            LowFrequencyRegion::Square => (u as f64) < r * h as f64 && (v as f64) < r * w as f64,
        }
    }
}

/// Binary high/low frequency label; `high[i] + low[i] == 1` everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskLabel {
    pub height: usize,
    pub width: usize,
    pub high: Vec<u8>,
    pub low: Vec<u8>,
    pub low_freq_radius_fraction: f64,
    pub magnitude_quantile: f64,
}

impl MaskLabel {
    pub fn from_high(height: usize, width: usize, high: Vec<u8>, params: &MaskParams) -> Self {
        let low = high.iter().map(|&v| 1 - v).collect();
        MaskLabel {
            height,
            width,
            high,
            low,
            low_freq_radius_fraction: params.low_freq_radius_fraction,
            magnitude_quantile: params.magnitude_quantile,
        }
    }

    /// Fraction of pixels labelled high frequency.
    pub fn coverage(&self) -> f64 {
        self.high.iter().map(|&v| v as usize).sum::<usize>() as f64 / self.high.len().max(1) as f64
    }

    /// `(1, 2, H, W)` with channel 0 = high, channel 1 = low.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .high
            .iter()
            .chain(&self.low)
            .map(|&v| T::cst(v as f64))
            .collect();
        Tensor::from_vec(Shape::new(1, 2, self.height, self.width), data)
            .expect("label planes fill the shape")
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, params: &MaskParams) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 2 {
            return Err(FameError::shape(
                "mask_label",
                format!("expected (1, 2, H, W), got {s}"),
            ));
        }
        let high: Vec<u8> = t
            .plane(0, 0)
            .iter()
            .map(|v| (v.as_f64() > 0.5) as u8)
            .collect();
        let label = MaskLabel::from_high(s.h, s.w, high, params);
        if t.plane(0, 1)
            .iter()
            .zip(&label.low)
            .any(|(v, &l)| (v.as_f64() > 0.5) as u8 != l)
        {
            return Err(FameError::Contract(
                "mask label channels are not complementary".into(),
            ));
        }
        Ok(label)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(FameError::shape("mask_label", "crop window outside label"));
        }
        let mut high = Vec::with_capacity(height * width);
        for y in top..top + height {
            high.extend_from_slice(
                &self.high[y * self.width + left..y * self.width + left + width],
            );
        }
        let low = high.iter().map(|&v| 1 - v).collect();
        Ok(MaskLabel {
            height,
            width,
            high,
            low,
            ..self.clone()
        })
    }
}

/// High-pass and low-pass reconstructions of a `(1, C, H, W)` image: the
/// inverse transforms of the spectrum outside and inside the low-frequency
/// region. They sum to the image up to round-off.
pub fn frequency_decomposition<T: Scalar>(
    image: &Tensor<T>,
    params: &MaskParams,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let s = single_image("frequency_decomposition", image)?;
    let mut high = dct2(image)?;
    let mut low = Spectrum::zeros(s.c, s.h, s.w);
    for (hc, lc) in high.coefficients.iter_mut().zip(&mut low.coefficients) {
        for u in 0..s.h {
            for v in 0..s.w {
                if params.is_low(u, v, s.h, s.w) {
                    lc[u * s.w + v] = std::mem::take(&mut hc[u * s.w + v]);
                }
            }
        }
    }
    Ok((idct2(&high)?, idct2(&low)?))
}

/// Per-pixel mean over channels of the absolute high-pass response, where
/// the high pass zeroes the low-frequency region of each channel's spectrum.
pub fn high_frequency_response<T: Scalar>(
    image: &Tensor<T>,
    params: &MaskParams,
) -> Result<Vec<f64>> {
    let s = single_image("make_mask_label", image)?;
    let (high, _) = frequency_decomposition(image, params)?;
    let mut response = vec![0.0; s.plane()];
    for c in 0..s.c {
        for (r, v) in response.iter_mut().zip(high.plane(0, c)) {
            *r += v.abs() / s.c as f64;
        }
    }
    Ok(response)
}

/// High-pass responses at or below this are transform round-off.
const RESPONSE_ROUNDOFF: f64 = 1e-9;

/// Value at sorted position `ceil(q·n) - 1`, so that exactly `n - ceil(q·n)`
/// distinct values lie strictly above it.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Ground-truth frequency label of a `(1, C, H, W)` image.
pub fn make_mask_label<T: Scalar>(image: &Tensor<T>, params: &MaskParams) -> Result<MaskLabel> {
    params.validate()?;
    let s = single_image("make_mask_label", image)?;
    if s.plane() == 1 {
        return Ok(MaskLabel::from_high(1, 1, vec![0], params));
    }
    let response = high_frequency_response(image, params)?;
    let threshold = quantile(&response, params.magnitude_quantile)
        .max(params.min_response)
        .max(RESPONSE_ROUNDOFF);
    let high = response.iter().map(|&r| (r > threshold) as u8).collect();
    Ok(MaskLabel::from_high(s.h, s.w, high, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Literal quadruple sum.
    fn brute_force(x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = 0.0;
                for r in 0..h {
                    for c in 0..w {
                        acc += x[r * w + c]
                            * (PI * u as f64 * (r as f64 + 0.5) / h as f64).cos()
                            * (PI * v as f64 * (c as f64 + 0.5) / w as f64).cos();
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed.wrapping_add(0x2545F4914F6CDD1D);
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s % 10_000) as f64 / 5_000.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn decomposition_sums_to_image() {
        let x = Tensor::from_vec(Shape::new(1, 2, 6, 5), noise(4, 60)).unwrap();
        let (high, low) = frequency_decomposition(&x, &MaskParams::default()).unwrap();
        for ((h, l), v) in high.data().iter().zip(low.data()).zip(x.data()) {
            assert!((h + l - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_pixel_and_constant_blocks() {
        assert_eq!(dct2_plane(&[0.7], 1, 1), vec![0.7]);
        let d = dct2_plane(&[0.5; 4], 2, 2);
        assert!((d[0] - 2.0).abs() < 1e-15);
        assert!(d[1..].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn separable_equals_brute_force_up_to_8x8() {
        for h in 1..=8 {
            for w in 1..=8 {
                let x = noise((h * 10 + w) as u64, h * w);
                let fast = dct2_plane(&x, h, w);
                let slow = brute_force(&x, h, w);
                let err = fast
                    .iter()
                    .zip(&slow)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err <= 1e-10, "{h}x{w}: {err}");
            }
        }
    }

    #[test]
    fn inverse_round_trips_and_inverts_dc() {
        let x = noise(3, 256);
        let back = idct2_plane(&dct2_plane(&x, 16, 16), 16, 16);
        let err = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-10, "{err}");

        let mut dc = vec![0.0; 6 * 4];
        dc[0] = 24.0;
        assert!(idct2_plane(&dc, 6, 4)
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-14));
        assert!(idct2_plane(&[0.0; 12], 3, 4).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linearity_and_energy() {
        let (h, w) = (8, 12);
        let x = noise(11, h * w);
        let y = noise(12, h * w);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.5 * a - 0.75 * b).collect();
        let (dx, dy, dc) = (
            dct2_plane(&x, h, w),
            dct2_plane(&y, h, w),
            dct2_plane(&combo, h, w),
        );
        for i in 0..h * w {
            assert!((dc[i] - (2.5 * dx[i] - 0.75 * dy[i])).abs() < 1e-9);
        }
        let img = Tensor::from_vec(Shape::new(1, 1, h, w), x.clone()).unwrap();
        let ortho = dct2(&img).unwrap().orthonormalized();
        let e_img: f64 = x.iter().map(|v| v * v).sum();
        let e_spec: f64 = ortho.coefficients[0].iter().map(|v| v * v).sum();
        assert!((e_img - e_spec).abs() < 1e-8, "{e_img} vs {e_spec}");
    }

    #[test]
    fn constant_image_has_no_high_frequency() {
        let img = Tensor::<f64>::full(Shape::new(1, 3, 32, 32), 0.6);
        let label = make_mask_label(
            &img,
            &MaskParams {
                min_response: 0.0,
                ..MaskParams::default()
            },
        )
        .unwrap();
        assert_eq!(label.coverage(), 0.0);
        assert!(label.high.iter().zip(&label.low).all(|(h, l)| h + l == 1));
    }

    #[test]
    fn full_radius_zeroes_everything() {
        let img = Tensor::from_vec(Shape::new(1, 1, 16, 16), noise(5, 256)).unwrap();
        let params = MaskParams {
            low_freq_radius_fraction: 0.9999,
            min_response: 0.0,
            ..MaskParams::default()
        };
        let response = high_frequency_response(&img, &params).unwrap();
        assert!(response.iter().all(|&r| r < 1e-12));
        assert_eq!(make_mask_label(&img, &params).unwrap().coverage(), 0.0);
    }

    #[test]
    fn step_edge_fires_near_edge_with_quantile_coverage() {
        let (h, w) = (64, 64);
        let img = Tensor::from_fn(Shape::new(1, 1, h, w), |[_, _, y, x]| {
            let smooth = 0.3 + 0.2 * (PI * y as f64 / h as f64).cos();
            smooth + if x >= 40 { 0.4 } else { 0.0 }
        });
        let params = MaskParams {
            magnitude_quantile: 0.9,
            min_response: 0.0,
            ..MaskParams::default()
        };
        let label = make_mask_label(&img, &params).unwrap();
        let on = label.high.iter().filter(|&&v| v == 1).count();
        let expected = h * w - (0.9 * (h * w) as f64).ceil() as usize;
        assert_eq!(on, expected);
        let near = |d: i64| {
            label
                .high
                .iter()
                .enumerate()
                .filter(|&(i, &v)| v == 1 && ((i % w) as i64 - 40).abs() <= d)
                .count()
        };
        assert_eq!(
            near(8),
            on,
            "every high pixel lies in the band around the edge"
        );
        assert!(near(4) * 2 >= on, "{} of {on} within 4 columns", near(4));
    }

    #[test]
    fn one_pixel_image_is_all_low() {
        let img = Tensor::<f32>::full(Shape::new(1, 4, 1, 1), 0.2);
        let label = make_mask_label(&img, &MaskParams::default()).unwrap();
        assert_eq!(
            (label.high.as_slice(), label.low.as_slice()),
            (&[0u8][..], &[1u8][..])
        );
    }

    #[test]
    fn out_of_range_fractions_are_rejected() {
        let img = Tensor::<f64>::zeros(Shape::new(1, 1, 4, 4));
        let bad = MaskParams {
            low_freq_radius_fraction: 1.0,
            ..MaskParams::default()
        };
        assert!(make_mask_label(&img, &bad).is_err());
        let bad = MaskParams {
            magnitude_quantile: 0.0,
            ..MaskParams::default()
        };
        assert!(make_mask_label(&img, &bad).is_err());
    }
}
