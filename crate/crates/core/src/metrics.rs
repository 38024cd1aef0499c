//! Full-reference (PSNR, SSIM, SAM, ERGAS) and no-reference (D_λ, D_s, QNR)
//! quality metrics on single `(1, B, H, W)` images with unit dynamic range.

use std::fmt::Write as _;

use crate::data::filter::gaussian_kernel;
use crate::data::wald_degrade_image;
use crate::error::{FameError, Result};
use crate::tensor::{Scalar, Shape, Tensor};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const PSNR_MIN_MSE: f64 = 1e-10;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Side of the non-overlapping Q-index blocks at full resolution.
pub const Q_BLOCK: usize = 32;
const MEAN_GUARD: f64 = 1e-12;

fn same_image<T: Scalar>(op: &'static str, y: &Tensor<T>, g: &Tensor<T>) -> Result<Shape> {
    let (a, b) = (y.shape(), g.shape());
    if a != b || a.n != 1 {
        return Err(FameError::shape(op, format!("expected two equal single images, got {a} and {b}")));
    }
    Ok(a)
}

fn plane_f64<T: Scalar>(t: &Tensor<T>, c: usize) -> Vec<f64> {
    t.plane(0, c).iter().map(|v| v.as_f64()).collect()
}

/// `10·log10(1/MSE)`, capped at 100 dB.
pub fn psnr<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Result<f64> {
    same_image("psnr", y, g)?;
    let mse = y
        .data()
        .iter()
        .zip(g.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / y.numel() as f64;
    Ok(if mse < PSNR_MIN_MSE { PSNR_CAP_DB } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB) })
}

/// Weighted sums over every fully contained `k.len()²` window.
fn valid_filter(x: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for c in 0..ow {
            rows[y * ow + c] = k.iter().enumerate().map(|(t, kt)| kt * x[y * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for c in 0..ow {
            out[y * ow + c] = k.iter().enumerate().map(|(t, kt)| kt * rows[(y + t) * ow + c]).sum();
        }
    }
    out
}

fn ssim_value(mx: f64, my: f64, sxx: f64, syy: f64, sxy: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2))
}

/// Mean SSIM over Gaussian windows (σ = 1.5) fully inside the image,
/// averaged over bands.
pub fn ssim<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, window: usize) -> Result<f64> {
    let s = same_image("ssim", y, g)?;
    if window % 2 == 0 || window > s.h || window > s.w {
        return Err(FameError::Contract(format!("ssim window {window} must be odd and fit {}x{}", s.h, s.w)));
    }
    let k = gaussian_kernel(SSIM_SIGMA, window / 2);
    let mut total = 0.0;
    for c in 0..s.c {
        let (a, b) = (plane_f64(y, c), plane_f64(g, c));
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let f = |v: &[f64]| valid_filter(v, s.h, s.w, &k);
        let (ma, mb) = (f(&a), f(&b));
        let (eaa, ebb, eab) = (f(&prod(&a, &a)), f(&prod(&b, &b)), f(&prod(&a, &b)));
        let n = ma.len();
        let sum: f64 = (0..n)
            .map(|i| {
                let (mx, my) = (ma[i], mb[i]);
                ssim_value(mx, my, eaa[i] - mx * mx, ebb[i] - my * my, eab[i] - mx * my)
            })
            .sum();
        total += sum / n as f64;
    }
    Ok(total / s.c as f64)
}

/// Mean spectral angle in radians over pixels where both vectors are
/// nonzero.
pub fn sam<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Result<f64> {
    let s = same_image("sam", y, g)?;
    if s.c < 2 {
        return Err(FameError::Contract(format!("sam needs at least 2 bands, got {}", s.c)));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..s.plane() {
        let (mut dot, mut ny, mut ng) = (0.0, 0.0, 0.0);
        for c in 0..s.c {
            let (a, b) = (y.plane(0, c)[i].as_f64(), g.plane(0, c)[i].as_f64());
            dot += a * b;
            ny += a * a;
            ng += b * b;
        }
        if ny == 0.0 || ng == 0.0 {
            continue;
        }
        sum += (dot / (ny.sqrt() * ng.sqrt())).clamp(-1.0, 1.0).acos();
        count += 1;
    }
    if count == 0 {
        return Err(FameError::numeric("sam", "every pixel has a zero spectral vector"));
    }
    Ok(sum / count as f64)
}

/// `100·ratio·sqrt(mean_b(RMSE_b² / mean(G_b)²))`.
pub fn ergas<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, ratio: f64) -> Result<f64> {
    let s = same_image("ergas", y, g)?;
    let mut acc = 0.0;
    for c in 0..s.c {
        let (a, b) = (y.plane(0, c), g.plane(0, c));
        let n = s.plane() as f64;
        let mean = b.iter().map(|v| v.as_f64()).sum::<f64>() / n;
        if mean.abs() < MEAN_GUARD {
            return Err(FameError::numeric("ergas", format!("band {c} of the reference has zero mean")));
        }
        let mse = a.iter().zip(b).map(|(p, q)| (p.as_f64() - q.as_f64()).powi(2)).sum::<f64>() / n;
        acc += mse / (mean * mean);
    }
    Ok(100.0 * ratio * (acc / s.c as f64).sqrt())
}

/// Universal image quality index of two equally sized windows. Degenerate
/// windows fall back to their defined limits: the luminance term when both
/// are constant, 1 when both are constant zero.
pub fn q_window(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
    let lum = mx * mx + my * my;
    let con = vx + vy;
    match (lum > 0.0, con > 0.0) {
        (true, true) => 4.0 * cxy * mx * my / (con * lum),
        (true, false) => 2.0 * mx * my / lum,
        (false, true) => 2.0 * cxy / con,
        (false, false) => 1.0,
    }
}

/// Mean Q-index over non-overlapping `block×block` tiles (the last partial
/// row and column of tiles are dropped; a block larger than the image is
/// clamped to it).
pub fn q_index(x: &[f64], y: &[f64], h: usize, w: usize, block: usize) -> f64 {
    let (bh, bw) = (block.min(h).max(1), block.min(w).max(1));
    let mut total = 0.0;
    let mut count = 0;
    let mut wx = Vec::with_capacity(bh * bw);
    let mut wy = Vec::with_capacity(bh * bw);
    for r in (0..=h - bh).step_by(bh) {
        for c in (0..=w - bw).step_by(bw) {
            wx.clear();
            wy.clear();
            for i in r..r + bh {
                wx.extend_from_slice(&x[i * w + c..i * w + c + bw]);
                wy.extend_from_slice(&y[i * w + c..i * w + c + bw]);
            }
            total += q_window(&wx, &wy);
            count += 1;
        }
    }
    total / count as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoReference {
    pub d_lambda: f64,
    pub d_s: f64,
    pub qnr: f64,
}

/// D_λ, D_s (exponents p = q = 1) and QNR of a fused image given its
/// low-resolution multispectral and panchromatic inputs.
pub fn qnr_suite<T: Scalar>(fused: &Tensor<T>, lrms: &Tensor<T>, pan: &Tensor<T>) -> Result<NoReference> {
    let (fs, ls, ps) = (fused.shape(), lrms.shape(), pan.shape());
    if fs.n != 1 || ls.n != 1 || ps.n != 1 || ps.c != 1 || fs.c != ls.c || (ps.h, ps.w) != (fs.h, fs.w) {
        return Err(FameError::shape("qnr", format!("fused {fs}, lrms {ls}, pan {ps}")));
    }
    if ls.h == 0 || fs.h % ls.h != 0 || fs.w % ls.w != 0 || fs.h / ls.h != fs.w / ls.w {
        return Err(FameError::shape("qnr", format!("lrms {ls} is not a uniform reduction of {fs}")));
    }
    let factor = fs.h / ls.h;
    let lr_block = (Q_BLOCK / factor).max(1);
    let fused_b: Vec<Vec<f64>> = (0..fs.c).map(|c| plane_f64(fused, c)).collect();
    let lrms_b: Vec<Vec<f64>> = (0..ls.c).map(|c| plane_f64(lrms, c)).collect();
    let mut d_lambda = 0.0;
    let mut pairs = 0;
    for l in 0..fs.c {
        for r in 0..fs.c {
            if l == r {
                continue;
            }
            let qf = q_index(&fused_b[l], &fused_b[r], fs.h, fs.w, Q_BLOCK);
            let ql = q_index(&lrms_b[l], &lrms_b[r], ls.h, ls.w, lr_block);
            d_lambda += (qf - ql).abs();
            pairs += 1;
        }
    }
    let d_lambda = if pairs > 0 { d_lambda / pairs as f64 } else { 0.0 };
    let pan_f32 = Tensor::<f32>::from_vec(ps, pan.data().iter().map(|v| v.as_f64() as f32).collect())?;
    let pan_lr = wald_degrade_image(&pan_f32, factor)?;
    let pan_hr = plane_f64(pan, 0);
    let pan_lr = plane_f64(&pan_lr, 0);
    let d_s = (0..fs.c)
        .map(|l| {
            let qf = q_index(&fused_b[l], &pan_hr, fs.h, fs.w, Q_BLOCK);
            let ql = q_index(&lrms_b[l], &pan_lr, ls.h, ls.w, lr_block);
            (qf - ql).abs()
        })
        .sum::<f64>()
        / fs.c as f64;
    Ok(NoReference { d_lambda, d_s, qnr: (1.0 - d_lambda) * (1.0 - d_s) })
}

/// Keys cubic convolution weight with `a = -0.5`.
fn cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

fn cubic_taps(out: usize, input: usize, factor: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..out)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            let base = src.floor() as isize;
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for (t, (i, w)) in idx.iter_mut().zip(&mut wts).enumerate() {
                let p = base - 1 + t as isize;
                *i = p.clamp(0, input as isize - 1) as usize;
                *w = cubic(src - p as f64);
            }
            (idx, wts)
        })
        .collect()
}

/// Bicubic upsampling with half-pixel centres and clamped borders; the
/// plain interpolation baseline.
pub fn upsample_bicubic<T: Scalar>(image: &Tensor<T>, factor: usize) -> Tensor<T> {
    let s = image.shape();
    let (oh, ow) = (s.h * factor, s.w * factor);
    let ty = cubic_taps(oh, s.h, factor);
    let tx = cubic_taps(ow, s.w, factor);
    let mut data = Vec::with_capacity(s.n * s.c * oh * ow);
    for n in 0..s.n {
        for c in 0..s.c {
            let p = image.plane(n, c);
            let mut rows = vec![0.0; s.h * ow];
            for y in 0..s.h {
                for (x, (idx, w)) in tx.iter().enumerate() {
                    rows[y * ow + x] = (0..4).map(|t| w[t] * p[y * s.w + idx[t]].as_f64()).sum();
                }
            }
            for (idx, w) in &ty {
                for x in 0..ow {
                    let v: f64 = (0..4).map(|t| w[t] * rows[idx[t] * ow + x]).sum();
                    data.push(T::cst(v));
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, oh, ow), data).expect("upsampled planes fill the shape")
}

/// The four full-reference metrics of one image.
pub fn reduced_metrics<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, ratio: f64) -> Result<[f64; 4]> {
    let fit = SSIM_WINDOW.min(g.shape().h).min(g.shape().w);
    let window = if fit % 2 == 0 { fit - 1 } else { fit };
    Ok([psnr(y, g)?, ssim(y, g, window)?, sam(y, g)?, ergas(y, g, ratio)?])
}

/// Column names of the reduced-resolution report.
pub const REDUCED_COLUMNS: [&str; 4] = ["psnr", "ssim", "sam", "ergas"];
/// Column names of the full-resolution report.
pub const FULL_COLUMNS: [&str; 3] = ["d_lambda", "d_s", "qnr"];

/// Per-image metric rows with an aggregate mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub columns: Vec<&'static str>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl MetricReport {
    pub fn new(columns: &[&'static str]) -> Self {
        MetricReport { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, id: impl Into<String>, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((id.into(), values));
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.rows.len().max(1) as f64;
        (0..self.columns.len()).map(|i| self.rows.iter().map(|r| r.1[i]).sum::<f64>() / n).collect()
    }

    pub fn column_mean(&self, name: &str) -> Option<f64> {
        let i = self.columns.iter().position(|c| *c == name)?;
        Some(self.mean()[i])
    }

    /// `id,<columns>` header, one row per image, then a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("id,{}\n", self.columns.join(","));
        let fmt_row = |id: &str, v: &[f64]| {
            let cells: Vec<String> = v.iter().map(|x| format!("{x:.8}")).collect();
            format!("{id},{}\n", cells.join(","))
        };
        for (id, v) in &self.rows {
            out.push_str(&fmt_row(id, v));
        }
        out.push_str(&fmt_row("mean", &self.mean()));
        out
    }

    /// Aligned console table; SAM is shown in degrees.
    pub fn pretty(&self) -> String {
        let show = |col: &str, v: f64| if col == "sam" { v.to_degrees() } else { v };
        let head: Vec<String> =
            self.columns.iter().map(|c| if *c == "sam" { "sam(deg)".to_string() } else { c.to_string() }).collect();
        let mut out = format!("{:<24}", "id");
        for h in &head {
            let _ = write!(out, "{h:>12}");
        }
        out.push('\n');
        let mean = ("mean".to_string(), self.mean());
        for (id, v) in self.rows.iter().chain(std::iter::once(&mean)) {
            let _ = write!(out, "{id:<24}");
            for (c, x) in self.columns.iter().zip(v) {
                let _ = write!(out, "{:>12.4}", show(c, *x));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(c: usize, h: usize, w: usize, seed: usize) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(1, c, h, w), |[_, c, y, x]| {
            0.5 + 0.4 * (((y * 7 + x * 3 + c * 11 + seed * 13) as f64) * 0.37).sin()
        })
    }

    #[test]
    fn psnr_values() {
        let g = img(2, 8, 8, 0);
        assert_eq!(psnr(&g, &g).unwrap(), 100.0);
        let y = g.map(|v| v + 0.1);
        assert!((psnr(&y, &g).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&y, &g).unwrap(), psnr(&g, &y).unwrap());
    }

    #[test]
    fn ssim_basics() {
        let g = img(2, 16, 16, 1);
        assert!((ssim(&g, &g, 11).unwrap() - 1.0).abs() < 1e-12);
        let inv = g.map(|v| 1.0 - v);
        assert!(ssim(&inv, &g, 11).unwrap() < 1.0);
        let y = img(2, 16, 16, 2);
        assert!((ssim(&y, &g, 11).unwrap() - ssim(&g, &y, 11).unwrap()).abs() < 1e-12);
        assert!(ssim(&g, &g, 10).is_err());
        assert!(ssim(&g, &g, 17).is_err());
    }

    #[test]
    fn sam_values() {
        let g = img(3, 4, 4, 0);
        assert!(sam(&g, &g).unwrap() < 1e-7);
        assert!(sam(&g.map(|v| 2.0 * v), &g).unwrap() < 1e-7);
        let a = Tensor::from_fn(Shape::new(1, 2, 2, 2), |[_, c, _, _]| if c == 0 { 1.0 } else { 0.0 });
        let b = a.map(|v| 1.0 - v);
        assert!((sam(&a, &b).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let z = Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2));
        assert!(sam(&z, &z).is_err());
    }

    #[test]
    fn ergas_values() {
        let g = Tensor::full(Shape::new(1, 1, 4, 4), 0.5);
        let y = Tensor::from_fn(g.shape(), |[_, _, h, w]| if (h + w) % 2 == 0 { 0.6 } else { 0.4 });
        assert!((ergas(&y, &g, 0.25).unwrap() - 5.0).abs() < 1e-9);
        assert!((ergas(&y, &g, 0.5).unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(ergas(&g, &g, 0.25).unwrap(), 0.0);
        assert!(ergas(&g, &Tensor::zeros(g.shape()), 0.25).is_err());
    }

    #[test]
    fn q_index_limits() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        assert!((q_window(&x, &x) - 1.0).abs() < 1e-12);
        assert_eq!(q_window(&[0.5; 4], &[0.5; 4]), 1.0);
        assert_eq!(q_window(&[0.0; 4], &[0.0; 4]), 1.0);
        let neg: Vec<f64> = x.iter().map(|v| 2.0 - v).collect();
        assert!(q_window(&x, &neg) < 0.0);
    }

    #[test]
    fn qnr_identity_and_self_consistency() {
        let lrms = img(4, 8, 8, 3).map(|v| v.clamp(0.0, 1.0));
        let fused = crate::tensor::upsample_bilinear(&lrms, 4);
        let pan = Tensor::from_fn(Shape::new(1, 1, 32, 32), |[_, _, y, x]| {
            (0..4).map(|c| fused.at(0, c, y, x)).sum::<f64>() / 4.0
        });
        let r = qnr_suite(&fused, &lrms, &pan).unwrap();
        assert!((r.qnr - (1.0 - r.d_lambda) * (1.0 - r.d_s)).abs() < 1e-12);
        assert!(r.d_lambda < 0.1, "{r:?}");
    }

    #[test]
    fn bicubic_preserves_constants_and_linear_ramps() {
        let c = Tensor::full(Shape::new(1, 2, 4, 4), 0.3f64);
        assert!(upsample_bicubic(&c, 4).data().iter().all(|v| (v - 0.3).abs() < 1e-12));
        let ramp = Tensor::from_fn(Shape::new(1, 1, 1, 8), |[_, _, _, x]| x as f64);
        let up = upsample_bicubic(&ramp, 2);
        for x in 4..12 {
            let want = (x as f64 + 0.5) / 2.0 - 0.5;
            assert!((up.at(0, 0, 0, x) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn report_csv_layout() {
        let mut r = MetricReport::new(&REDUCED_COLUMNS);
        r.push("a", vec![30.0, 0.9, 0.1, 2.0]);
        r.push("b", vec![32.0, 0.8, 0.3, 4.0]);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "id,psnr,ssim,sam,ergas");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("mean,31.00000000"));
        assert_eq!(r.column_mean("sam"), Some(0.2));
    }
}
