//! Central finite-difference oracle for tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::{FameError, Result};

/// Perturbation applied to each coordinate.
pub const STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so coordinates with vanishing
/// gradients are compared on an absolute scale.
const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub tolerance: f64,
    pub coordinates: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

fn eval<F>(f: &F, input: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new().with_finite_checks(true);
    let x = tape.leaf(input.clone());
    let y = f(&mut tape, x)?;
    let v = tape.value(y);
    if v.numel() != 1 {
        return Err(FameError::Contract(format!(
            "grad_check needs a scalar function, got {}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

/// Compares the tape gradient of scalar `f` at `input` with central
/// differences. A function that returns different values for the same input
/// is rejected as untestable.
pub fn grad_check<F>(f: F, input: &Tensor<f64>, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new().with_finite_checks(true);
    let x = tape.leaf(input.clone());
    let y = f(&mut tape, x)?;
    let base = tape.value(y).data().first().copied().unwrap_or(f64::NAN);
    let grads = tape.backward(y)?;
    let analytic = grads.tensor(&tape, x);

    let again = eval(&f, input)?;
    if again.to_bits() != base.to_bits() {
        return Err(FameError::Contract(format!(
            "function is not deterministic ({base} then {again}); gradient is untestable"
        )));
    }

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        tolerance,
        coordinates: input.numel(),
    };
    let mut probe = input.clone();
    for i in 0..input.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let plus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - STEP;
        let minus = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * STEP);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel_error || i == 0 {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}

/// `Σ y ⊙ r`: reduces any output to a scalar with fixed random-looking
/// weights so that every output coordinate contributes distinctly.
pub fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y);
    let mut state = seed ^ 0x9E37_79B9_7F4A_7C15;
    let r = Tensor::from_fn(shape, |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state % 2000) as f64 / 1000.0 - 1.0
    });
    let rv = tape.constant(r);
    let prod = tape.mul(y, rv)?;
    tape.sum(prod)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn input(shape: Shape, offset: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |[n, c, h, w]| {
            ((n * 7 + c * 5 + h * 3 + w) as f64 * 0.37).sin() + offset
        })
    }

    #[test]
    fn linear_function_is_exact() {
        let r = grad_check(
            |t, x| t.scalar_mul(x, 3.0).and_then(|y| t.sum(y)),
            &input(Shape::new(1, 2, 3, 3), 0.0),
            1e-4,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn relu_away_from_kink_passes() {
        let x = input(Shape::new(2, 2, 3, 3), 0.0).map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
        let r = grad_check(|t, x| t.relu(x).and_then(|y| project(t, y, 3)), &x, 1e-4).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn softmax_passes() {
        let r = grad_check(
            |t, x| t.softmax_channels(x).and_then(|y| project(t, y, 9)),
            &input(Shape::new(2, 4, 2, 3), 0.0),
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn nondeterministic_function_is_flagged() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let res = grad_check(
            |t, x| {
                calls.set(calls.get() + 1.0);
                let y = t.scalar_mul(x, calls.get())?;
                t.sum(y)
            },
            &input(Shape::new(1, 1, 2, 2), 0.0),
            1e-4,
        );
        assert!(matches!(res, Err(FameError::Contract(_))));
    }
}
