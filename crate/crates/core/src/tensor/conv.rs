//! 2-D cross-correlation via im2col and GEMM.

use super::tape::{GradBuf, Op};
use super::{matmul, Scalar, Shape, Tape, Tensor, Var};
use crate::error::{FameError, Result};

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, no padding: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn geometry(x: Shape, w: Shape, stride: usize, pad: usize) -> Result<Geometry> {
    if w.c != x.c {
        return Err(FameError::shape(
            "conv2d",
            format!(
                "weight in_channels (axis 1) = {} but input channels (axis 1) = {}",
                w.c, x.c
            ),
        ));
    }
    if stride == 0 {
        return Err(FameError::shape("conv2d", "stride must be positive"));
    }
    if x.h + 2 * pad < w.h || x.w + 2 * pad < w.w {
        return Err(FameError::shape(
            "conv2d",
            format!(
                "kernel {}x{} (axes 2, 3) larger than padded input {}x{}",
                w.h,
                w.w,
                x.h + 2 * pad,
                x.w + 2 * pad
            ),
        ));
    }
    Ok(Geometry {
        cin: x.c,
        h: x.h,
        w: x.w,
        kh: w.h,
        kw: w.w,
        stride,
        pad,
        ho: (x.h + 2 * pad - w.h) / stride + 1,
        wo: (x.w + 2 * pad - w.w) / stride + 1,
    })
}

fn im2col<T: Scalar>(g: &Geometry, x: &[T], cols: &mut [T]) {
    let ncols = g.cols();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        // contiguous run with zero margins
                        let shift = kx as isize - g.pad as isize;
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = ox as isize + shift;
                            *o = if ix >= 0 && (ix as usize) < g.w {
                                src[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            *o = if ix >= 0 && (ix as usize) < g.w {
                                src[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &Geometry, cols: &[T], dx: &mut [T]) {
    let ncols = g.cols();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Cross-correlation of `input (N, Cin, H, W)` with `weight (Cout, Cin, kh, kw)`
    /// plus an optional `bias (1, Cout, 1, 1)`.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let g = geometry(xs, ws, stride, padding)?;
        let cout = ws.n;
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.numel() != cout {
                return Err(FameError::shape(
                    "conv2d",
                    format!(
                        "bias has {} values for {} output channels (axis 0)",
                        bs.numel(),
                        cout
                    ),
                ));
            }
        }
        let out_shape = Shape::new(xs.n, cout, g.ho, g.wo);
        let mut out = vec![T::zero(); out_shape.numel()];
        let x = self.value(input).data();
        let wd = self.value(weight).data();
        let k = g.k();
        let ncols = g.cols();
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); k * ncols]
        };
        for n in 0..xs.n {
            let xn = &x[n * xs.sample()..(n + 1) * xs.sample()];
            let on = &mut out[n * cout * ncols..(n + 1) * cout * ncols];
            if g.is_pointwise() {
                matmul(false, false, cout, k, ncols, wd, xn, on, false);
            } else {
                im2col(&g, xn, &mut cols);
                matmul(false, false, cout, k, ncols, wd, &cols, on, false);
            }
            if let Some(b) = bias {
                let bd = self.value(b).data();
                for (o, row) in on.chunks_mut(ncols).enumerate() {
                    let bo = bd[o];
                    row.iter_mut().for_each(|v| *v += bo);
                }
            }
        }
        let value = Tensor::from_vec(out_shape, out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        self.push(
            value,
            Op::Conv2d {
                x: input,
                w: weight,
                b: bias,
                stride,
                pad: padding,
            },
            &inputs,
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    pad: usize,
    gout: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    let xs = tape.shape(x);
    let ws = tape.shape(w);
    let g = geometry(xs, ws, stride, pad).expect("validated in forward");
    let cout = ws.n;
    let k = g.k();
    let ncols = g.cols();
    let xd = tape.value(x).data();
    let wd = tape.value(w).data();

    if let Some(b) = b {
        if let Some(gb) = buf.slot(b) {
            for n in 0..xs.n {
                let gn = &gout[n * cout * ncols..(n + 1) * cout * ncols];
                for (o, row) in gn.chunks(ncols).enumerate() {
                    gb[o] += row.iter().copied().sum::<T>();
                }
            }
        }
    }

    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * ncols]
    };
    if let Some(gw) = buf.slot(w) {
        for n in 0..xs.n {
            let gn = &gout[n * cout * ncols..(n + 1) * cout * ncols];
            let xn = &xd[n * xs.sample()..(n + 1) * xs.sample()];
            if g.is_pointwise() {
                matmul(false, true, cout, ncols, k, gn, xn, gw, true);
            } else {
                im2col(&g, xn, &mut cols);
                matmul(false, true, cout, ncols, k, gn, &cols, gw, true);
            }
        }
    }

    if let Some(gx) = buf.slot(x) {
        for n in 0..xs.n {
            let gn = &gout[n * cout * ncols..(n + 1) * cout * ncols];
            let dxn = &mut gx[n * xs.sample()..(n + 1) * xs.sample()];
            if g.is_pointwise() {
                matmul(true, false, k, cout, ncols, wd, gn, dxn, true);
            } else {
                matmul(true, false, k, cout, ncols, wd, gn, &mut cols, false);
                col2im(&g, &cols, dxn);
            }
        }
    }
}
