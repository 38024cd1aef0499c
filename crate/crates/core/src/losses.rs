//! Training objective: L1 reconstruction, annealed mask supervision and the
//! SCV load-balancing penalty.

use crate::error::{FameError, Result};
use crate::model::FameOutput;
use crate::tensor::{Scalar, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha_initial: f64,
    pub beta: f64,
    pub anneal_cutoff_fraction: f64,
    pub total_epochs: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_initial: 0.001,
            beta: 0.1,
            anneal_cutoff_fraction: 0.7,
            total_epochs: 1000,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_initial >= 0.0) {
            return Err(FameError::config("alpha_initial", "must be non-negative"));
        }
        if !(self.beta >= 0.0) {
            return Err(FameError::config("beta", "must be non-negative"));
        }
        if !(self.anneal_cutoff_fraction > 0.0 && self.anneal_cutoff_fraction <= 1.0) {
            return Err(FameError::config(
                "anneal_cutoff_fraction",
                "must lie in (0, 1]",
            ));
        }
        if self.total_epochs == 0 {
            return Err(FameError::config("epochs", "must be positive"));
        }
        Ok(())
    }

    /// `α₀ · max(0, 1 − epoch / (cutoff · E))`.
    pub fn alpha_at(&self, epoch: usize) -> f64 {
        let span = self.anneal_cutoff_fraction * self.total_epochs as f64;
        self.alpha_initial * (1.0 - epoch as f64 / span).max(0.0)
    }
}

/// Scalar values of one evaluation of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub rec: f64,
    pub mask: f64,
    pub load: f64,
    pub alpha_effective: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `rec + α·mask + β·load`.
    pub fn new(rec: f64, mask: f64, load: f64, epoch: usize, weights: &LossWeights) -> Self {
        let alpha_effective = weights.alpha_at(epoch);
        LossBreakdown {
            rec,
            mask,
            load,
            alpha_effective,
            total: rec + alpha_effective * mask + weights.beta * load,
        }
    }
}

/// Mean absolute error between prediction and ground truth.
pub fn reconstruction_loss<T: Scalar>(tape: &mut Tape<T>, y: Var, gt: Var) -> Result<Var> {
    tape.l1_distance(y, gt)
}

/// Mean absolute error between the two-channel mask and its label.
pub fn mask_loss<T: Scalar>(tape: &mut Tape<T>, mask: Var, label: Var) -> Result<Var> {
    tape.l1_distance(mask, label)
}

/// `(σ/μ)²` with the population standard deviation.
pub fn scv<T: Scalar>(tape: &mut Tape<T>, w: Var) -> Result<Var> {
    tape.scv(w)
}

/// Sum of the SCVs of each bank's batch-summed gate weights.
pub fn load_loss<T: Scalar>(tape: &mut Tape<T>, gates: &[Var]) -> Result<Var> {
    let terms = gates
        .iter()
        .map(|&g| {
            let importance = tape.sum_batch(g)?;
            tape.scv(importance)
        })
        .collect::<Result<Vec<_>>>()?;
    tape.add_all(&terms)
}

/// Differentiable total and its breakdown for one forward pass. `label` is
/// the `(n, 2, H, W)` mask label; it is ignored when the mask is ablated.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    out: &FameOutput,
    gt: Var,
    label: Var,
    epoch: usize,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let rec = reconstruction_loss(tape, out.hrms, gt)?;
    let load = load_loss(tape, &out.gates())?;
    let mask = out
        .mask
        .map(|m| mask_loss(tape, m.mask, label))
        .transpose()?;
    let value = |t: &Tape<T>, v: Var| t.value(v).data()[0].as_f64();
    let breakdown = LossBreakdown::new(
        value(tape, rec),
        mask.map_or(0.0, |m| value(tape, m)),
        value(tape, load),
        epoch,
        weights,
    );
    let mut total = rec;
    if let Some(m) = mask {
        let m = tape.scalar_mul(m, breakdown.alpha_effective)?;
        total = tape.add(total, m)?;
    }
    let l = tape.scalar_mul(load, weights.beta)?;
    total = tape.add(total, l)?;
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn t(v: Vec<f64>) -> Tensor<f64> {
        let n = v.len();
        Tensor::from_vec(Shape::new(1, n, 1, 1), v).unwrap()
    }

    fn eval(f: impl Fn(&mut Tape<f64>) -> Result<Var>) -> f64 {
        let mut tape = Tape::new();
        let v = f(&mut tape).unwrap();
        tape.value(v).data()[0]
    }

    #[test]
    fn reconstruction_values_and_gradient() {
        let g = Tensor::from_fn(Shape::new(1, 2, 3, 3), |[_, c, h, w]| {
            (c + h * w) as f64 * 0.1
        });
        assert_eq!(
            eval(|tp| {
                let a = tp.constant(g.clone());
                reconstruction_loss(tp, a, a)
            }),
            0.0
        );
        let y = g.map(|v| v + 1.0);
        assert!(
            (eval(|tp| {
                let a = tp.constant(y.clone());
                let b = tp.constant(g.clone());
                reconstruction_loss(tp, a, b)
            }) - 1.0)
                .abs()
                < 1e-12
        );

        let y: Tensor<f64> =
            Tensor::from_fn(
                g.shape(),
                |[_, c, h, w]| if (c + h + w) % 2 == 0 { 1.0 } else { -1.0 },
            );
        let mut tape = Tape::new();
        let yv = tape.leaf(y.clone());
        let gv = tape.constant(Tensor::zeros(g.shape()));
        let l = reconstruction_loss(&mut tape, yv, gv).unwrap();
        let grad = tape.backward(l).unwrap().tensor(&tape, yv);
        for (gr, yy) in grad.data().iter().zip(y.data()) {
            assert!((gr - yy.signum() / 18.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mask_loss_values() {
        let s = Shape::new(1, 2, 2, 2);
        let m = Tensor::from_fn(s, |[_, c, _, _]| if c == 0 { 1.0 } else { 0.0 });
        let inv = m.map(|v| 1.0 - v);
        let half = Tensor::from_fn(
            s,
            |[_, c, h, _]| if (c == 0) == (h == 0) { 1.0 } else { 0.0 },
        );
        let run = |a: &Tensor<f64>, b: &Tensor<f64>| {
            eval(|tp| {
                let x = tp.constant(a.clone());
                let y = tp.constant(b.clone());
                mask_loss(tp, x, y)
            })
        };
        assert_eq!(run(&m, &m), 0.0);
        assert_eq!(run(&m, &inv), 1.0);
        assert_eq!(run(&m, &half), 0.5);
    }

    #[test]
    fn scv_values() {
        let run = |v: Vec<f64>| {
            eval(|tp| {
                let x = tp.constant(t(v.clone()));
                scv(tp, x)
            })
        };
        assert_eq!(run(vec![0.25; 4]), 0.0);
        assert!((run(vec![0.7, 0.3]) - 0.16).abs() < 1e-12);
        let one_hot = [1.0, 0.0, 0.0, 0.0];
        let mean = 0.25;
        let var = one_hot.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!((run(one_hot.to_vec()) - var / (mean * mean)).abs() < 1e-12);
        assert!((run(vec![1.4, 0.6]) - run(vec![0.7, 0.3])).abs() < 1e-12);
    }

    #[test]
    fn load_loss_sums_batch_importance() {
        let g = Tensor::from_vec(
            Shape::new(2, 4, 1, 1),
            vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5],
        )
        .unwrap();
        assert_eq!(
            eval(|tp| {
                let x = tp.constant(g.clone());
                load_loss(tp, &[x, x, x])
            }),
            0.0
        );
        let skew = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.7, 0.3]).unwrap();
        let v = eval(|tp| {
            let x = tp.constant(g.clone());
            let y = tp.constant(skew.clone());
            load_loss(tp, &[x, y])
        });
        assert!((v - 0.16).abs() < 1e-12);
    }

    #[test]
    fn alpha_schedule() {
        let w = LossWeights {
            total_epochs: 100,
            ..Default::default()
        };
        assert_eq!(w.alpha_at(0), 0.001);
        assert!((w.alpha_at(35) - 0.0005).abs() < 1e-15);
        assert_eq!(w.alpha_at(70), 0.0);
        assert_eq!(w.alpha_at(99), 0.0);
        for e in 1..100 {
            assert!(w.alpha_at(e) <= w.alpha_at(e - 1));
        }
    }

    #[test]
    fn breakdown_total_identity() {
        let w = LossWeights {
            total_epochs: 10,
            ..Default::default()
        };
        let b = LossBreakdown::new(0.3, 0.5, 0.2, 2, &w);
        assert!((b.total - (b.rec + b.alpha_effective * b.mask + w.beta * b.load)).abs() < 1e-15);
    }

    #[test]
    fn invalid_weights_rejected() {
        for w in [
            LossWeights {
                alpha_initial: -1.0,
                ..Default::default()
            },
            LossWeights {
                beta: -0.1,
                ..Default::default()
            },
            LossWeights {
                anneal_cutoff_fraction: 0.0,
                ..Default::default()
            },
            LossWeights {
                anneal_cutoff_fraction: 1.5,
                ..Default::default()
            },
        ] {
            assert!(w.validate().is_err());
        }
    }
}
