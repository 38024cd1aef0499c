use super::tape::{GradBuf, Op};
use super::{Scalar, Shape, Tape, Tensor, Var};
use crate::error::{FameError, Result};

/// Result shape of an elementwise binary op; only one-element operands
/// broadcast.
fn binary_shape(op: &'static str, a: Shape, b: Shape) -> Result<Shape> {
    if a == b || b.numel() == 1 {
        Ok(a)
    } else if a.numel() == 1 {
        Ok(b)
    } else {
        Err(FameError::shape(
            op,
            format!("{a} and {b} differ and neither is a scalar"),
        ))
    }
}

#[inline]
fn pick<T: Copy>(d: &[T], i: usize) -> T {
    if d.len() == 1 {
        d[0]
    } else {
        d[i]
    }
}

#[inline]
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    fn binary(
        &mut self,
        a: Var,
        b: Var,
        op: Op<T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let shape = binary_shape(name, self.shape(a), self.shape(b))?;
        let ad = self.value(a).data();
        let bd = self.value(b).data();
        let out = (0..shape.numel())
            .map(|i| f(pick(ad, i), pick(bd, i)))
            .collect();
        self.push(Tensor::from_vec(shape, out)?, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Sum of any number of equally shaped values.
    pub fn add_all(&mut self, items: &[Var]) -> Result<Var> {
        let (&first, rest) = items
            .split_first()
            .ok_or_else(|| FameError::Contract("add_all of zero operands".into()))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    pub fn scalar_mul(&mut self, x: Var, s: f64) -> Result<Var> {
        let s = T::cst(s);
        let value = self.value(x).map(|v| v * s);
        self.push(value, Op::ScalarMul(x, s), &[x])
    }

    /// ReLU with subgradient 0 at the origin.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(softplus);
        self.push(value, Op::Softplus(x), &[x])
    }

    /// `x (N, C, H, W) ⊙ mask (N, 1, H, W)` with the mask shared by all channels.
    pub fn mask_channels(&mut self, x: Var, mask: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ms = self.shape(mask);
        if ms != Shape::new(xs.n, 1, xs.h, xs.w) {
            return Err(FameError::shape(
                "mask_channels",
                format!("mask {ms} does not cover input {xs}"),
            ));
        }
        let xd = self.value(x).data();
        let md = self.value(mask).data();
        let p = xs.plane();
        let mut out = vec![T::zero(); xs.numel()];
        for n in 0..xs.n {
            let m = &md[n * p..(n + 1) * p];
            for c in 0..xs.c {
                let base = (n * xs.c + c) * p;
                for ((o, &v), &mv) in out[base..base + p]
                    .iter_mut()
                    .zip(&xd[base..base + p])
                    .zip(m)
                {
                    *o = v * mv;
                }
            }
        }
        self.push(
            Tensor::from_vec(xs, out)?,
            Op::MaskChannels { x, mask },
            &[x, mask],
        )
    }
}

pub(super) fn relu_backward<T: Scalar>(x: &Tensor<T>, xv: Var, g: &[T], buf: &mut GradBuf<'_, T>) {
    if let Some(gx) = buf.slot(xv) {
        for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(x.data()) {
            if xi > T::zero() {
                *d += gi;
            }
        }
    }
}

pub(super) fn softplus_backward<T: Scalar>(
    x: &Tensor<T>,
    xv: Var,
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    if let Some(gx) = buf.slot(xv) {
        for ((d, &gi), &xi) in gx.iter_mut().zip(g).zip(x.data()) {
            *d += gi * sigmoid(xi);
        }
    }
}

fn accumulate_broadcast<T: Scalar>(dst: &mut [T], g: &[T], f: impl Fn(usize, T) -> T) {
    if dst.len() == 1 && g.len() > 1 {
        let mut acc = T::zero();
        for (i, &gi) in g.iter().enumerate() {
            acc += f(i, gi);
        }
        dst[0] += acc;
    } else {
        for (i, (d, &gi)) in dst.iter_mut().zip(g).enumerate() {
            *d += f(i, gi);
        }
    }
}

pub(super) fn add_backward<T: Scalar>(
    a: Var,
    b: Var,
    sign_b: T,
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    if let Some(ga) = buf.slot(a) {
        accumulate_broadcast(ga, g, |_, gi| gi);
    }
    if let Some(gb) = buf.slot(b) {
        accumulate_broadcast(gb, g, |_, gi| gi * sign_b);
    }
}

pub(super) fn mul_backward<T: Scalar>(
    tape: &Tape<T>,
    a: Var,
    b: Var,
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    let ad = tape.value(a).data();
    let bd = tape.value(b).data();
    if let Some(ga) = buf.slot(a) {
        accumulate_broadcast(ga, g, |i, gi| gi * pick(bd, i));
    }
    if let Some(gb) = buf.slot(b) {
        accumulate_broadcast(gb, g, |i, gi| gi * pick(ad, i));
    }
}

pub(super) fn mask_channels_backward<T: Scalar>(
    tape: &Tape<T>,
    x: Var,
    mask: Var,
    g: &[T],
    buf: &mut GradBuf<'_, T>,
) {
    let xs = tape.shape(x);
    let p = xs.plane();
    let xd = tape.value(x).data();
    let md = tape.value(mask).data();
    if let Some(gx) = buf.slot(x) {
        for n in 0..xs.n {
            let m = &md[n * p..(n + 1) * p];
            for c in 0..xs.c {
                let base = (n * xs.c + c) * p;
                for ((d, &gi), &mv) in gx[base..base + p].iter_mut().zip(&g[base..base + p]).zip(m)
                {
                    *d += gi * mv;
                }
            }
        }
    }
    if let Some(gm) = buf.slot(mask) {
        for n in 0..xs.n {
            let gm_n = &mut gm[n * p..(n + 1) * p];
            for c in 0..xs.c {
                let base = (n * xs.c + c) * p;
                for ((d, &gi), &xi) in gm_n
                    .iter_mut()
                    .zip(&g[base..base + p])
                    .zip(&xd[base..base + p])
                {
                    *d += gi * xi;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_and_softplus_values() {
        let mut tape = Tape::<f64>::new();
        let x =
            tape.constant(Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap());
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let s = tape.softplus(x).unwrap();
        assert!((tape.value(s).data()[1] - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((tape.value(s).data()[1] - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(Shape::new(1, 1, 1, 2)));
        let r = tape.relu(x).unwrap();
        let loss = tape.sum(r).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn scalar_broadcast_only() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(Shape::new(1, 2, 2, 2)));
        let s = tape.constant(Tensor::scalar(3.0));
        let y = tape.add(a, s).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 3.0));
        let b = tape.constant(Tensor::zeros(Shape::new(1, 1, 2, 2)));
        assert!(matches!(tape.add(a, b), Err(FameError::Shape { .. })));
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::full(Shape::new(1, 1, 2, 3), 2.0));
        let s = tape.leaf(Tensor::scalar(0.5));
        let y = tape.mul(a, s).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(s).unwrap(), &[12.0]);
    }
}
