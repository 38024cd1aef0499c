use super::tape::{GradBuf, Op};
use super::{Scalar, Shape, Tape, Tensor, Var};
use crate::error::{FameError, Result};

/// Mean below this magnitude makes the coefficient of variation undefined.
const SCV_MEAN_GUARD: f64 = 1e-12;

impl<T: Scalar> Tape<T> {
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.value(x).data();
        let s = d.iter().copied().sum::<T>() / T::cst(d.len() as f64);
        self.push(Tensor::scalar(s), Op::MeanAll(x), &[x])
    }

    /// Mean absolute difference, returned as a one-element tensor.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(FameError::shape("l1_distance", format!("{sa} vs {sb}")));
        }
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let s =
            ad.iter().zip(bd).map(|(&x, &y)| (x - y).abs()).sum::<T>() / T::cst(ad.len() as f64);
        self.push(Tensor::scalar(s), Op::L1Distance(a, b), &[a, b])
    }

    /// `(N, C, H, W) -> (N, C, 1, 1)` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let inv = T::cst(1.0 / s.plane() as f64);
        let out = self
            .value(x)
            .data()
            .chunks(s.plane())
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        self.push(
            Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), out)?,
            Op::GlobalAvgPool(x),
            &[x],
        )
    }

    /// `(N, C, H, W) -> (N, C, 1, 1)` spatial max; ties resolve to the first
    /// cell in row-major order.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let p = s.plane();
        let mut out = Vec::with_capacity(s.n * s.c);
        let mut argmax = Vec::with_capacity(s.n * s.c);
        for (i, plane) in self.value(x).data().chunks(p).enumerate() {
            let mut best = 0;
            for (j, &v) in plane.iter().enumerate() {
                if v > plane[best] {
                    best = j;
                }
            }
            out.push(plane[best]);
            argmax.push(i * p + best);
        }
        self.push(
            Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), out)?,
            Op::GlobalMaxPool { x, argmax },
            &[x],
        )
    }

    /// `(N, C, H, W) -> (1, C, H, W)` sum over the batch.
    pub fn sum_batch(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let per = s.sample();
        let mut out = vec![T::zero(); per];
        for chunk in self.value(x).data().chunks(per) {
            for (o, &v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        self.push(
            Tensor::from_vec(Shape::new(1, s.c, s.h, s.w), out)?,
            Op::SumBatch(x),
            &[x],
        )
    }

    /// Squared coefficient of variation `(σ / mean)²` of all elements, with
    /// the population standard deviation.
    pub fn scv(&mut self, x: Var) -> Result<Var> {
        let d = self.value(x).data();
        if d.is_empty() {
            return Err(FameError::Contract("scv of an empty vector".into()));
        }
        let (mean, var) = mean_var(d);
        if mean.abs().as_f64() < SCV_MEAN_GUARD {
            return Err(FameError::numeric(
                "scv",
                format!("mean {mean} too close to zero"),
            ));
        }
        let v = var / (mean * mean);
        self.push(Tensor::scalar(v), Op::Scv(x), &[x])
    }
}

fn mean_var<T: Scalar>(d: &[T]) -> (T, T) {
    let n = T::cst(d.len() as f64);
    let mean = d.iter().copied().sum::<T>() / n;
    let var = d.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, var)
}

pub(super) fn l1_backward<T: Scalar>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    g: T,
    buf: &mut GradBuf<'_, T>,
) {
    let ad = tape.value(a).data();
    let bd = tape.value(b).data();
    let scale = g / T::cst(ad.len() as f64);
    let sign = |x: T, y: T| {
        if x > y {
            scale
        } else if x < y {
            -scale
        } else {
            T::zero()
        }
    };
    if let Some(ga) = buf.slot(a) {
        for ((d, &x), &y) in ga.iter_mut().zip(ad).zip(bd) {
            *d += sign(x, y);
        }
    }
    if let Some(gb) = buf.slot(b) {
        for ((d, &x), &y) in gb.iter_mut().zip(ad).zip(bd) {
            *d -= sign(x, y);
        }
    }
}

pub(super) fn avg_pool_backward<T: Scalar>(s: Shape, x: Var, g: &[T], buf: &mut GradBuf<'_, T>) {
    if let Some(gx) = buf.slot(x) {
        let inv = T::cst(1.0 / s.plane() as f64);
        for (plane, &gi) in gx.chunks_mut(s.plane()).zip(g) {
            let v = gi * inv;
            plane.iter_mut().for_each(|d| *d += v);
        }
    }
}

/// d/dw_i of var/mean²: `2(w_i - m) / (n m²) - 2 var / (n m³)`.
pub(super) fn scv_backward<T: Scalar>(x: &Tensor<T>, xv: Var, g: T, buf: &mut GradBuf<'_, T>) {
    let Some(gx) = buf.slot(xv) else { return };
    let d = x.data();
    let n = T::cst(d.len() as f64);
    let two = T::cst(2.0);
    let (m, var) = mean_var(d);
    let m2 = m * m;
    let tail = two * var / (n * m2 * m);
    for (o, &w) in gx.iter_mut().zip(d) {
        *o += g * (two * (w - m) / (n * m2) - tail);
    }
}
