//! Noisy top-k gated expert banks with per-sample routing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::layers::{Expert, Linear};
use super::params::{Bound, Initializer};
use crate::error::{FameError, Result};
use crate::tensor::{Scalar, Shape, Tape, Tensor, Var};

/// Tolerance on the unit sum of the selected gate weights.
pub const GATE_SUM_TOL: f64 = 1e-6;

/// Gate of one sample: dense weights and the indices that received mass.
#[derive(Clone, Debug, PartialEq)]
pub struct GateWeights {
    pub weights: Vec<f64>,
    pub selected: Vec<usize>,
}

impl GateWeights {
    /// One entry per batch element of an `(n, experts, 1, 1)` gate tensor.
    pub fn from_tensor<T: Scalar>(gates: &Tensor<T>) -> Vec<GateWeights> {
        let s = gates.shape();
        (0..s.n)
            .map(|n| {
                let weights: Vec<f64> = gates.sample(n).iter().map(|v| v.as_f64()).collect();
                let selected = weights
                    .iter()
                    .enumerate()
                    .filter(|(_, &w)| w != 0.0)
                    .map(|(i, _)| i)
                    .collect();
                GateWeights { weights, selected }
            })
            .collect()
    }

    /// Checks the top-k contract: exactly `k` nonzero, nonnegative entries
    /// summing to one.
    pub fn check(&self, k: usize) -> Result<()> {
        if self.selected.len() != k {
            return Err(FameError::numeric(
                "gate",
                format!(
                    "{} nonzero weights, expected {k}: {:?}",
                    self.selected.len(),
                    self.weights
                ),
            ));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(FameError::numeric(
                "gate",
                format!("negative or NaN weight in {:?}", self.weights),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > GATE_SUM_TOL {
            return Err(FameError::numeric(
                "gate",
                format!("weights sum to {total}"),
            ));
        }
        Ok(())
    }
}

/// `V = A2·F_e + softplus(A1·F_e)·η` with `F_e = GAP(x) + GMP(x)`, followed
/// by a top-k softmax.
#[derive(Clone, Debug)]
pub struct Gate {
    pub noise: Linear,
    pub logits: Linear,
}

impl Gate {
    pub fn new<T: Scalar>(
        init: &mut Initializer<'_, T>,
        name: &str,
        features: usize,
        experts: usize,
    ) -> Self {
        Gate {
            noise: Linear::new(init, &format!("{name}.a1"), features, experts),
            logits: Linear::new(init, &format!("{name}.a2"), features, experts),
        }
    }

    /// Raw logits `V`; noise is drawn from `rng` when given.
    pub fn logits<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let avg = tape.global_avg_pool(x)?;
        let max = tape.global_max_pool(x)?;
        let fe = tape.add(avg, max)?;
        let v = self.logits.forward(tape, p, fe)?;
        match rng {
            Some(rng) => {
                let scale = self.noise.forward(tape, p, fe)?;
                let scale = tape.softplus(scale)?;
                let shape = tape.shape(scale);
                let eta = Tensor::from_fn(shape, |_| T::cst(rng.sample::<f64, _>(StandardNormal)));
                let eta = tape.constant(eta);
                let eps = tape.mul(scale, eta)?;
                tape.add(v, eps)
            }
            None => Ok(v),
        }
    }
}

/// `N` experts of one kind behind a shared gate.
#[derive(Clone, Debug)]
pub struct ExpertBank<E> {
    pub gate: Gate,
    pub experts: Vec<E>,
}

/// Output of [`ExpertBank::forward`].
#[derive(Clone, Copy, Debug)]
pub struct MoeOutput {
    pub output: Var,
    /// `(n, experts, 1, 1)` gate weights.
    pub gates: Var,
    pub logits: Var,
}

impl<E: Expert> ExpertBank<E> {
    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    /// `Σ_i W_i · expert_i(x)`, evaluated per sample only for experts with a
    /// nonzero weight.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        k: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<MoeOutput> {
        if self.experts.is_empty() {
            return Err(FameError::Contract("expert bank is empty".into()));
        }
        let logits = self.gate.logits(tape, p, x, rng)?;
        let gates = tape.topk_softmax(logits, k)?;
        let output = self.combine(tape, p, x, gates)?;
        Ok(MoeOutput {
            output,
            gates,
            logits,
        })
    }

    /// Mixes expert outputs with precomputed `(n, experts, 1, 1)` weights.
    pub fn combine<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
        gates: Var,
    ) -> Result<Var> {
        let batch = tape.shape(x).n;
        let gs = tape.shape(gates);
        if gs != Shape::new(batch, self.experts.len(), 1, 1) {
            return Err(FameError::shape(
                "moe",
                format!("gates {gs} for batch {batch} and {} experts", self.len()),
            ));
        }
        let mut terms = Vec::new();
        for (i, expert) in self.experts.iter().enumerate() {
            let rows: Vec<usize> = {
                let g = tape.value(gates);
                (0..batch)
                    .filter(|&n| g.at(n, i, 0, 0) != T::zero())
                    .collect()
            };
            if rows.is_empty() {
                continue;
            }
            let full = rows.len() == batch;
            let xi = if full {
                x
            } else {
                tape.batch_select(x, &rows)?
            };
            let y = expert.forward(tape, p, xi)?;
            let y = tape.scale_rows(y, gates, i, &rows)?;
            let y = if full {
                y
            } else {
                tape.batch_scatter(y, &rows, batch)?
            };
            terms.push(y);
        }
        tape.add_all(&terms)
    }
}
