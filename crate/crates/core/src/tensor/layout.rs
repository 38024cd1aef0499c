use super::tape::{GradBuf, Op};
use super::{Scalar, Shape, Tape, Tensor, Var};
use crate::error::{FameError, Result};

/// Source taps `(i0, i1, w0, w1)` for each output index of a half-pixel
/// centred linear resampling by an integer factor.
fn linear_taps(len_in: usize, factor: usize) -> Vec<(usize, usize, f64, f64)> {
    (0..len_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len_in - 1);
            let i1 = (i0 + 1).min(len_in - 1);
            let w1 = src - i0 as f64;
            (i0, i1, 1.0 - w1, w1)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor without a tape.
pub fn upsample_bilinear<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let s = x.shape();
    let ty = linear_taps(s.h, factor);
    let tx = linear_taps(s.w, factor);
    let out_shape = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
    let ow = out_shape.w;
    let mut out = vec![T::zero(); out_shape.numel()];
    for (src, dst) in x
        .data()
        .chunks(s.plane())
        .zip(out.chunks_mut(out_shape.plane()))
    {
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::cst(wy0), T::cst(wy1));
            let r0 = &src[y0 * s.w..(y0 + 1) * s.w];
            let r1 = &src[y1 * s.w..(y1 + 1) * s.w];
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let (wx0, wx1) = (T::cst(wx0), T::cst(wx1));
                dst[oy * ow + ox] =
                    wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    }
    Tensor::from_vec(out_shape, out).expect("shape computed above")
}

impl<T: Scalar> Tape<T> {
    /// Concatenates along the channel axis; batch and spatial sizes must agree.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| FameError::Contract("concat of zero tensors".into()))?;
        let s0 = self.shape(first);
        let mut c = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(FameError::shape(
                    "concat_channels",
                    format!("{s} does not align with {s0}"),
                ));
            }
            c += s.c;
        }
        let out_shape = Shape::new(s0.n, c, s0.h, s0.w);
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n {
            for &p in parts {
                out.extend_from_slice(self.value(p).sample(n));
            }
        }
        self.push(
            Tensor::from_vec(out_shape, out)?,
            Op::Concat(parts.to_vec()),
            parts,
        )
    }

    /// Channels `[start, start + len)`.
    pub fn narrow_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + len > s.c || len == 0 {
            return Err(FameError::shape(
                "narrow_channels",
                format!("channels {start}..{} outside {s}", start + len),
            ));
        }
        let value = self.value(x).channels(start, len);
        self.push(value, Op::Narrow { x, start }, &[x])
    }

    /// Splits the channel axis into consecutive groups of the given sizes.
    pub fn split_channels(&mut self, x: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let s = self.shape(x);
        let total: usize = sizes.iter().sum();
        if total != s.c {
            return Err(FameError::shape(
                "split_channels",
                format!("sizes {sizes:?} sum to {total}, input has {} channels", s.c),
            ));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.narrow_channels(x, start, len)?);
            start += len;
        }
        Ok(out)
    }

    /// Bilinear upsampling by an integer factor (half-pixel centres, edge clamp).
    pub fn bilinear_upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(FameError::Contract(
                "upsample factor must be positive".into(),
            ));
        }
        let value = upsample_bilinear(self.value(x), factor);
        self.push(value, Op::Upsample { x, factor }, &[x])
    }

    /// Rows of the batch axis, in the given order.
    pub fn batch_select(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= s.n) {
            return Err(FameError::shape(
                "batch_select",
                format!("row {bad} outside batch of {}", s.n),
            ));
        }
        let t = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * s.sample());
        for &r in rows {
            out.extend_from_slice(t.sample(r));
        }
        let value = Tensor::from_vec(Shape::new(rows.len(), s.c, s.h, s.w), out)?;
        self.push(
            value,
            Op::BatchSelect {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        )
    }

    /// Places sample `j` of `x` at batch row `rows[j]` of a zero tensor with
    /// `batch` rows.
    pub fn batch_scatter(&mut self, x: Var, rows: &[usize], batch: usize) -> Result<Var> {
        let s = self.shape(x);
        if rows.len() != s.n || rows.iter().any(|&r| r >= batch) {
            return Err(FameError::shape(
                "batch_scatter",
                format!("rows {rows:?} do not fit {s} into {batch}"),
            ));
        }
        let per = s.sample();
        let mut out = vec![T::zero(); batch * per];
        let t = self.value(x);
        for (j, &r) in rows.iter().enumerate() {
            out[r * per..(r + 1) * per].copy_from_slice(t.sample(j));
        }
        let value = Tensor::from_vec(Shape::new(batch, s.c, s.h, s.w), out)?;
        self.push(
            value,
            Op::BatchScatter {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        )
    }
}

pub(super) fn concat_backward<T: Scalar>(
    tape: &Tape<T>,
    parts: &[Var],
    out: Shape,
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    let per_out = out.sample();
    let mut offset = 0;
    for &p in parts {
        let per = tape.shape(p).sample();
        if let Some(gp) = buf.slot(p) {
            for n in 0..out.n {
                let src = &g[n * per_out + offset..n * per_out + offset + per];
                for (d, &v) in gp[n * per..(n + 1) * per].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        offset += per;
    }
}

pub(super) fn narrow_backward<T: Scalar>(
    xs: Shape,
    x: Var,
    start: usize,
    out: Shape,
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    let Some(gx) = buf.slot(x) else { return };
    let p = xs.plane();
    for n in 0..xs.n {
        let dst = &mut gx[(n * xs.c + start) * p..(n * xs.c + start + out.c) * p];
        let src = &g[n * out.sample()..(n + 1) * out.sample()];
        for (d, &v) in dst.iter_mut().zip(src) {
            *d += v;
        }
    }
}

pub(super) fn upsample_backward<T: Scalar>(
    xs: Shape,
    x: Var,
    factor: usize,
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    let Some(gx) = buf.slot(x) else { return };
    let ty = linear_taps(xs.h, factor);
    let tx = linear_taps(xs.w, factor);
    let ow = xs.w * factor;
    let op = ow * xs.h * factor;
    for (dst, src) in gx.chunks_mut(xs.plane()).zip(g.chunks(op)) {
        for (oy, &(y0, y1, wy0, wy1)) in ty.iter().enumerate() {
            let (wy0, wy1) = (T::cst(wy0), T::cst(wy1));
            for (ox, &(x0, x1, wx0, wx1)) in tx.iter().enumerate() {
                let (wx0, wx1) = (T::cst(wx0), T::cst(wx1));
                let v = src[oy * ow + ox];
                dst[y0 * xs.w + x0] += v * wy0 * wx0;
                dst[y0 * xs.w + x1] += v * wy0 * wx1;
                dst[y1 * xs.w + x0] += v * wy1 * wx0;
                dst[y1 * xs.w + x1] += v * wy1 * wx1;
            }
        }
    }
}

pub(super) fn batch_select_backward<T: Scalar>(
    xs: Shape,
    x: Var,
    rows: &[usize],
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    let Some(gx) = buf.slot(x) else { return };
    let per = xs.sample();
    for (j, &r) in rows.iter().enumerate() {
        for (d, &v) in gx[r * per..(r + 1) * per]
            .iter_mut()
            .zip(&g[j * per..(j + 1) * per])
        {
            *d += v;
        }
    }
}

pub(super) fn batch_scatter_backward<T: Scalar>(
    xs: Shape,
    x: Var,
    rows: &[usize],
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    let Some(gx) = buf.slot(x) else { return };
    let per = xs.sample();
    for (j, &r) in rows.iter().enumerate() {
        for (d, &v) in gx[j * per..(j + 1) * per]
            .iter_mut()
            .zip(&g[r * per..(r + 1) * per])
        {
            *d += v;
        }
    }
}
