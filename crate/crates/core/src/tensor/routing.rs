//! Channel-axis distributions, dense layers and the sparse routing primitives
//! used by the gating networks.

use super::tape::{GradBuf, Op};
use super::{matmul, Scalar, Shape, Tape, Tensor, Var};
use crate::error::{FameError, Result};

/// Calls `f` with the channel values at every `(n, h, w)` position.
fn for_each_position<T: Scalar>(
    s: Shape,
    src: &[T],
    dst: &mut [T],
    mut f: impl FnMut(&[T], &mut [T]),
) {
    let p = s.plane();
    let mut inbuf = vec![T::zero(); s.c];
    let mut outbuf = vec![T::zero(); s.c];
    for n in 0..s.n {
        let base = n * s.sample();
        for i in 0..p {
            for c in 0..s.c {
                inbuf[c] = src[base + c * p + i];
            }
            f(&inbuf, &mut outbuf);
            for c in 0..s.c {
                dst[base + c * p + i] = outbuf[c];
            }
        }
    }
}

fn softmax_into<T: Scalar>(x: &[T], y: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut z = T::zero();
    for (o, &v) in y.iter_mut().zip(x) {
        *o = (v - m).exp();
        z += *o;
    }
    y.iter_mut().for_each(|o| *o = *o / z);
}

/// Indices of the `k` largest entries; ties keep the lower index.
pub(crate) fn top_k_indices<T: Scalar>(x: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| {
        x[b].partial_cmp(&x[a])
            .expect("NaN screened by caller")
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

impl<T: Scalar> Tape<T> {
    /// `(N, F…) -> (N, O, 1, 1)` with `weight (O, F, 1, 1)` and optional
    /// `bias (1, O, 1, 1)`; the input is flattened per sample.
    pub fn fully_connected(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        let f = xs.sample();
        if ws.sample() != f {
            return Err(FameError::shape(
                "fully_connected",
                format!(
                    "weight {ws} expects {} inputs, got {f} from {xs}",
                    ws.sample()
                ),
            ));
        }
        let o = ws.n;
        if let Some(b) = bias {
            if self.shape(b).numel() != o {
                return Err(FameError::shape(
                    "fully_connected",
                    format!("bias does not have {o} entries"),
                ));
            }
        }
        let mut out = vec![T::zero(); xs.n * o];
        matmul(
            false,
            true,
            xs.n,
            f,
            o,
            self.value(x).data(),
            self.value(weight).data(),
            &mut out,
            false,
        );
        if let Some(b) = bias {
            let bd = self.value(b).data();
            for row in out.chunks_mut(o) {
                for (v, &bi) in row.iter_mut().zip(bd) {
                    *v += bi;
                }
            }
        }
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.push(
            Tensor::from_vec(Shape::new(xs.n, o, 1, 1), out)?,
            Op::FullyConnected {
                x,
                w: weight,
                b: bias,
            },
            &inputs,
        )
    }

    /// Softmax across the channel axis at every spatial position.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let mut out = vec![T::zero(); s.numel()];
        for_each_position(s, self.value(x).data(), &mut out, softmax_into);
        self.push(Tensor::from_vec(s, out)?, Op::Softmax(x), &[x])
    }

    /// Keeps the `k` largest channel logits per position, softmax-normalizes
    /// them and sets every other entry to exactly zero.
    pub fn topk_softmax(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.shape(x);
        if k == 0 || k > s.c {
            return Err(FameError::Contract(format!(
                "top-k needs 1 <= k <= {}, got {k}",
                s.c
            )));
        }
        let xd = self.value(x).data();
        if let Some(pos) = xd.iter().position(|v| !v.is_finite()) {
            let n = pos / s.sample();
            let row: Vec<String> = (0..s.c)
                .map(|c| format!("{}", xd[n * s.sample() + c * s.plane() + pos % s.plane()]))
                .collect();
            return Err(FameError::numeric(
                "topk_softmax",
                format!("non-finite gate logit in sample {n}: [{}]", row.join(", ")),
            ));
        }
        let mut out = vec![T::zero(); s.numel()];
        let mut sel_vals = vec![T::zero(); k];
        let mut sel_out = vec![T::zero(); k];
        for_each_position(s, xd, &mut out, |v, y| {
            let idx = top_k_indices(v, k);
            for (j, &i) in idx.iter().enumerate() {
                sel_vals[j] = v[i];
            }
            softmax_into(&sel_vals, &mut sel_out);
            y.iter_mut().for_each(|o| *o = T::zero());
            for (j, &i) in idx.iter().enumerate() {
                y[i] = sel_out[j];
            }
        });
        self.push(Tensor::from_vec(s, out)?, Op::TopKSoftmax(x), &[x])
    }

    /// Forward: one-hot of the channel argmax (first maximum wins).
    /// Backward: the incoming gradient passes to `x` unchanged.
    pub fn straight_through_onehot(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let mut out = vec![T::zero(); s.numel()];
        for_each_position(s, self.value(x).data(), &mut out, |v, y| {
            let mut best = 0;
            for (i, &vi) in v.iter().enumerate() {
                if vi > v[best] {
                    best = i;
                }
            }
            y.iter_mut().for_each(|o| *o = T::zero());
            y[best] = T::one();
        });
        self.push(Tensor::from_vec(s, out)?, Op::StraightThrough(x), &[x])
    }

    /// `y[j] = x[j] * gates[rows[j], expert]` for `x (R, C, H, W)` and
    /// `gates (N, E, 1, 1)`.
    pub fn scale_rows(&mut self, x: Var, gates: Var, expert: usize, rows: &[usize]) -> Result<Var> {
        let xs = self.shape(x);
        let gs = self.shape(gates);
        if rows.len() != xs.n
            || expert >= gs.c
            || gs.plane() != 1
            || rows.iter().any(|&r| r >= gs.n)
        {
            return Err(FameError::shape(
                "scale_rows",
                format!("input {xs}, gates {gs}, rows {rows:?}, expert {expert}"),
            ));
        }
        let gd = self.value(gates).data();
        let per = xs.sample();
        let mut out = self.value(x).data().to_vec();
        for (j, &r) in rows.iter().enumerate() {
            let gv = gd[r * gs.c + expert];
            out[j * per..(j + 1) * per]
                .iter_mut()
                .for_each(|v| *v *= gv);
        }
        self.push(
            Tensor::from_vec(xs, out)?,
            Op::ScaleRows {
                x,
                gates,
                expert,
                rows: rows.to_vec(),
            },
            &[x, gates],
        )
    }
}

pub(super) fn fc_backward<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    w: Var,
    b: Option<Var>,
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    let xs = tape.shape(x);
    let o = tape.shape(w).n;
    let f = xs.sample();
    if let Some(gx) = buf.slot(x) {
        matmul(false, false, xs.n, o, f, g, tape.value(w).data(), gx, true);
    }
    if let Some(gw) = buf.slot(w) {
        matmul(true, false, o, xs.n, f, g, tape.value(x).data(), gw, true);
    }
    if let Some(b) = b {
        if let Some(gb) = buf.slot(b) {
            for row in g.chunks(o) {
                for (d, &v) in gb.iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
    }
}

/// Shared by dense and top-k softmax: `dx_i = y_i (g_i - Σ_j g_j y_j)`;
/// entries with `y_i = 0` receive nothing.
pub(super) fn softmax_backward<T: Scalar>(
    y: &Tensor<T>,
    x: Var,
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    let Some(gx) = buf.slot(x) else { return };
    let s = y.shape();
    let p = s.plane();
    let yd = y.data();
    for n in 0..s.n {
        let base = n * s.sample();
        for i in 0..p {
            let mut dot = T::zero();
            for c in 0..s.c {
                let k = base + c * p + i;
                dot += g[k] * yd[k];
            }
            for c in 0..s.c {
                let k = base + c * p + i;
                gx[k] += yd[k] * (g[k] - dot);
            }
        }
    }
}

pub(super) fn scale_rows_backward<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    gates: Var,
    expert: usize,
    rows: &[usize],
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    let xs = tape.shape(x);
    let e = tape.shape(gates).c;
    let per = xs.sample();
    let gd = tape.value(gates).data();
    if let Some(gx) = buf.slot(x) {
        for (j, &r) in rows.iter().enumerate() {
            let gv = gd[r * e + expert];
            for (d, &gi) in gx[j * per..(j + 1) * per]
                .iter_mut()
                .zip(&g[j * per..(j + 1) * per])
            {
                *d += gi * gv;
            }
        }
    }
    if let Some(gg) = buf.slot(gates) {
        let xd = tape.value(x).data();
        for (j, &r) in rows.iter().enumerate() {
            let dot: T = xd[j * per..(j + 1) * per]
                .iter()
                .zip(&g[j * per..(j + 1) * per])
                .map(|(&a, &b)| a * b)
                .sum();
            gg[r * e + expert] += dot;
        }
    }
}
