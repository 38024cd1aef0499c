use super::tape::{GradBuf, Op};
use super::{Scalar, Tape, Tensor, Var};
use crate::error::{FameError, Result};

impl<T: Scalar> Tape<T> {
    /// Per-sample, per-channel normalization over H×W with population
    /// variance: `(x - mean) / sqrt(var + eps)`.
    pub fn instance_norm(&mut self, input: Var, eps: f64) -> Result<Var> {
        let s = self.shape(input);
        if s.plane() == 0 {
            return Err(FameError::shape(
                "instance_norm",
                format!("empty spatial extent in {s}"),
            ));
        }
        let x = self.value(input).data();
        let p = s.plane();
        let inv_p = T::cst(1.0 / p as f64);
        let eps = T::cst(eps);
        let mut out = vec![T::zero(); x.len()];
        let mut rstd = Vec::with_capacity(s.n * s.c);
        for (src, dst) in x.chunks(p).zip(out.chunks_mut(p)) {
            let mean = src.iter().copied().sum::<T>() * inv_p;
            let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_p;
            let r = (var + eps).sqrt().recip();
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - mean) * r;
            }
            rstd.push(r);
        }
        let value = Tensor::from_vec(s, out)?;
        self.push(value, Op::InstanceNorm { x: input, rstd }, &[input])
    }
}

pub(super) fn instance_norm_backward<T: Scalar>(
    y: &Tensor<T>,
    rstd: &[T],
    x: Var,
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    let Some(gx) = buf.slot(x) else { return };
    let p = y.shape().plane();
    let inv_p = T::cst(1.0 / p as f64);
    for (((dx, gy), yy), &r) in gx
        .chunks_mut(p)
        .zip(g.chunks(p))
        .zip(y.data().chunks(p))
        .zip(rstd)
    {
        let mean_g = gy.iter().copied().sum::<T>() * inv_p;
        let mean_gy = gy.iter().zip(yy).map(|(&a, &b)| a * b).sum::<T>() * inv_p;
        for ((d, &gi), &yi) in dx.iter_mut().zip(gy).zip(yy) {
            *d += r * (gi - mean_g - yi * mean_gy);
        }
    }
}
