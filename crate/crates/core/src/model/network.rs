use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::NetworkConfig;
use super::layers::{Conv, ConvExpert, FusionExpert, HinBlock, ResBlock, WideResBlock};
use super::moe::{ExpertBank, Gate, GateWeights};
use super::params::{Bound, Initializer, ParamStore};
use crate::error::{FameError, Result};
use crate::tensor::{Scalar, Shape, Tape, Tensor, Var};

/// Init scale of the final 1×1 projection.
pub const OUTPUT_INIT_SCALE: f64 = 0.1;

/// Keeps Gumbel samples away from `log(0)`.
const GUMBEL_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct FeatureBranch {
    pub head: Conv,
    pub blocks: Vec<ResBlock>,
}

impl FeatureBranch {
    fn new<T: Scalar>(
        init: &mut Initializer<'_, T>,
        name: &str,
        cin: usize,
        cfg: &NetworkConfig,
    ) -> Self {
        let c = cfg.base_channels;
        FeatureBranch {
            head: Conv::new(init, &format!("{name}.head"), cin, c, 3),
            blocks: (0..cfg.num_resblocks)
                .map(|i| ResBlock::new(init, &format!("{name}.res{i}"), c))
                .collect(),
        }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        use super::layers::Expert;
        let mut h = self.head.forward(tape, p, x)?;
        for b in &self.blocks {
            h = b.forward(tape, p, h)?;
        }
        Ok(h)
    }
}

/// `C1(ReLU(C3(F_c)))` producing two logit channels (high, low).
#[derive(Clone, Debug)]
pub struct MaskPredictor {
    pub conv3: Conv,
    pub conv1: Conv,
}

#[derive(Clone, Debug)]
pub enum Fusion {
    Mixture(ExpertBank<FusionExpert>),
    Residual(WideResBlock),
}

/// Differentiable handles of one mask prediction.
#[derive(Clone, Copy, Debug)]
pub struct MaskOutput {
    pub logits: Var,
    /// Softmax of `(P + g)/τ`.
    pub soft: Var,
    /// One-hot forward, gradient of `soft` backward.
    pub mask: Var,
}

/// Every intermediate of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct FameOutput {
    pub lrms_up: Var,
    pub f_ms: Var,
    pub f_pan: Var,
    pub f_c: Var,
    pub mask: Option<MaskOutput>,
    pub f_h: Var,
    pub f_l: Var,
    pub h_f: Var,
    pub l_f: Var,
    pub w_h: Var,
    pub w_l: Var,
    pub w_f: Option<Var>,
    /// Mixture output before the final projection.
    pub mixture: Var,
    pub hrms: Var,
}

impl FameOutput {
    /// Gate tensors present in this pass: `W_h`, `W_l` and, unless the mixture
    /// is replaced, `W_f`.
    pub fn gates(&self) -> Vec<Var> {
        let mut g = vec![self.w_h, self.w_l];
        g.extend(self.w_f);
        g
    }

    /// Per-sample gate weights of every bank, checked against the top-k
    /// contract.
    pub fn gate_weights<T: Scalar>(
        &self,
        tape: &Tape<T>,
        k: usize,
    ) -> Result<Vec<Vec<GateWeights>>> {
        self.gates()
            .into_iter()
            .map(|g| {
                let w = GateWeights::from_tensor(tape.value(g));
                w.iter().try_for_each(|gw| gw.check(k))?;
                Ok(w)
            })
            .collect()
    }
}

/// The full network. Holds parameter ids; values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct FameNet {
    pub cfg: NetworkConfig,
    pub ms_branch: FeatureBranch,
    pub pan_branch: FeatureBranch,
    pub mask: Option<MaskPredictor>,
    pub hf: ExpertBank<HinBlock>,
    pub lf: ExpertBank<ConvExpert>,
    pub fusion: Fusion,
    pub output: Conv,
}

impl FameNet {
    /// Builds the architecture and its initial parameters from `seed`.
    pub fn new<T: Scalar>(cfg: NetworkConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Initializer {
            store: &mut store,
            rng: &mut rng,
        };
        let c = cfg.base_channels;
        let n = cfg.num_experts;
        let ms_branch = FeatureBranch::new(&mut init, "ms", cfg.ms_bands, &cfg);
        let pan_branch = FeatureBranch::new(&mut init, "pan", 1, &cfg);
        let mask = (!cfg.ablation_disable_mask).then(|| MaskPredictor {
            conv3: Conv::new(&mut init, "mask.c3", 2 * c, c, 3),
            conv1: Conv::new(&mut init, "mask.c1", c, 2, 1),
        });
        let hf = ExpertBank {
            gate: Gate::new(&mut init, "hf.gate", 2 * c, n),
            experts: (0..n)
                .map(|i| HinBlock::new(&mut init, &format!("hf.expert{i}"), 2 * c))
                .collect(),
        };
        let lf = ExpertBank {
            gate: Gate::new(&mut init, "lf.gate", 2 * c, n),
            experts: (0..n)
                .map(|i| ConvExpert::new(&mut init, &format!("lf.expert{i}"), 2 * c))
                .collect(),
        };
        let mixed = 6 * c;
        let fusion = if cfg.ablation_replace_mixture {
            let hidden = WideResBlock::matching_hidden(mixed, c, Self::mixture_param_count(&cfg));
            Fusion::Residual(WideResBlock::new(&mut init, "fusion.res", mixed, hidden, c))
        } else {
            Fusion::Mixture(ExpertBank {
                gate: Gate::new(&mut init, "fusion.gate", mixed, n),
                experts: (0..n)
                    .map(|i| FusionExpert::new(&mut init, &format!("fusion.expert{i}"), mixed, c))
                    .collect(),
            })
        };
        let output = Conv::scaled(&mut init, "output", c, cfg.ms_bands, 1, OUTPUT_INIT_SCALE);
        Ok((
            FameNet {
                cfg,
                ms_branch,
                pan_branch,
                mask,
                hf,
                lf,
                fusion,
                output,
            },
            store,
        ))
    }

    /// Parameter count of the gated fusion bank, which the ablation block
    /// is sized to match.
    pub fn mixture_param_count(cfg: &NetworkConfig) -> usize {
        let (c, n) = (cfg.base_channels, cfg.num_experts);
        let gate = 2 * (6 * c * n + n);
        gate + n * FusionExpert::param_count(6 * c, c)
    }

    /// Zeroes the final projection so the output equals the upsampled LRMS.
    pub fn zero_output_layer<T: Scalar>(&self, store: &mut ParamStore<T>) {
        for id in [self.output.weight, self.output.bias] {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = T::zero());
        }
    }

    fn check_inputs<T: Scalar>(&self, tape: &Tape<T>, pan: Var, lrms: Var) -> Result<()> {
        let (ps, ls) = (tape.shape(pan), tape.shape(lrms));
        let f = self.cfg.upsample_factor;
        if ps.c != 1 {
            return Err(FameError::shape(
                "extract_features",
                format!("pan must have 1 channel, got {ps}"),
            ));
        }
        if ls.c != self.cfg.ms_bands {
            return Err(FameError::shape(
                "extract_features",
                format!("lrms must have {} bands, got {ls}", self.cfg.ms_bands),
            ));
        }
        if ls.n != ps.n || ls.h * f != ps.h || ls.w * f != ps.w {
            return Err(FameError::shape(
                "extract_features",
                format!("lrms {ls} upsampled x{f} does not match pan {ps}"),
            ));
        }
        Ok(())
    }

    /// Returns `(lrms_up, F_ms, F_pan, F_c)`.
    pub fn extract_features<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        pan: Var,
        lrms: Var,
    ) -> Result<(Var, Var, Var, Var)> {
        self.check_inputs(tape, pan, lrms)?;
        let up = tape.bilinear_upsample(lrms, self.cfg.upsample_factor)?;
        let f_ms = self.ms_branch.forward(tape, p, up)?;
        let f_pan = self.pan_branch.forward(tape, p, pan)?;
        let f_c = tape.concat_channels(&[f_ms, f_pan])?;
        Ok((up, f_ms, f_pan, f_c))
    }

    /// Gumbel-softmax mask with a straight-through one-hot. `rng = None`
    /// sets the Gumbel noise to zero.
    pub fn predict_mask<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        f_c: Var,
        tau: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<MaskOutput> {
        let mp = self
            .mask
            .as_ref()
            .ok_or_else(|| FameError::Contract("mask predictor disabled by ablation".into()))?;
        let h = mp.conv3.forward(tape, p, f_c)?;
        let h = tape.relu(h)?;
        let logits = mp.conv1.forward(tape, p, h)?;
        gumbel_mask(tape, logits, tau, rng)
    }

    /// Routes `F_c` (masked unless ablated) through the HF and LF banks.
    /// Returns `(F_h, F_l, H_F, L_F, W_h, W_l)`.
    #[allow(clippy::type_complexity)]
    pub fn frequency_experts<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        f_c: Var,
        mask: Option<Var>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var, Var, Var, Var, Var)> {
        let (f_h, f_l) = match mask {
            Some(m) => split_frequency(tape, f_c, m)?,
            None => (f_c, f_c),
        };
        let k = self.cfg.top_k;
        let hf = self.hf.forward(tape, p, f_h, k, rng.as_deref_mut())?;
        let lf = self.lf.forward(tape, p, f_l, k, rng.as_deref_mut())?;
        Ok((f_h, f_l, hf.output, lf.output, hf.gates, lf.gates))
    }

    /// Returns `(hrms, mixture, W_f)`.
    #[allow(clippy::too_many_arguments)]
    pub fn experts_mixture<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        lrms_up: Var,
        parts: [Var; 4],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var, Option<Var>)> {
        let f_f = tape.concat_channels(&parts)?;
        let (mixture, w_f) = match &self.fusion {
            Fusion::Mixture(bank) => {
                let out = bank.forward(tape, p, f_f, self.cfg.top_k, rng)?;
                (out.output, Some(out.gates))
            }
            Fusion::Residual(block) => (block.forward(tape, p, f_f)?, None),
        };
        let detail = self.output.forward(tape, p, mixture)?;
        let hrms = tape.add(detail, lrms_up)?;
        Ok((hrms, mixture, w_f))
    }

    /// Full pipeline. Noise (Gumbel and gate) is drawn from `rng_seed` when
    /// `training`, or always when `eval_mode_noise_off` is false.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        pan: Var,
        lrms: Var,
        training: bool,
        rng_seed: u64,
    ) -> Result<FameOutput> {
        let noisy = training || !self.cfg.eval_mode_noise_off;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut noise = noisy.then_some(&mut rng);
        let (lrms_up, f_ms, f_pan, f_c) = self.extract_features(tape, p, pan, lrms)?;
        let mask = match self.mask {
            Some(_) => {
                Some(self.predict_mask(tape, p, f_c, self.cfg.gumbel_tau, noise.as_deref_mut())?)
            }
            None => None,
        };
        let (f_h, f_l, h_f, l_f, w_h, w_l) =
            self.frequency_experts(tape, p, f_c, mask.map(|m| m.mask), noise.as_deref_mut())?;
        let (hrms, mixture, w_f) =
            self.experts_mixture(tape, p, lrms_up, [f_ms, f_pan, l_f, h_f], noise)?;
        Ok(FameOutput {
            lrms_up,
            f_ms,
            f_pan,
            f_c,
            mask,
            f_h,
            f_l,
            h_f,
            l_f,
            w_h,
            w_l,
            w_f,
            mixture,
            hrms,
        })
    }

    /// Convenience wrapper: evaluates a batch without gradients.
    pub fn predict<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        pan: &Tensor<T>,
        lrms: &Tensor<T>,
        rng_seed: u64,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape, false);
        let pv = tape.constant(pan.clone());
        let lv = tape.constant(lrms.clone());
        let out = self.forward(&mut tape, &p, pv, lv, false, rng_seed)?;
        Ok(tape.value(out.hrms).clone())
    }
}

/// `softmax((P + g)/τ)` then a straight-through one-hot.
pub fn gumbel_mask<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    tau: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<MaskOutput> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(FameError::Contract(format!(
            "gumbel temperature must be positive, got {tau}"
        )));
    }
    let s = tape.shape(logits);
    if s.c != 2 {
        return Err(FameError::shape(
            "predict_mask",
            format!("mask logits need 2 channels, got {s}"),
        ));
    }
    let noisy = match rng {
        Some(rng) => {
            let g = Tensor::from_fn(s, |_| {
                let u: f64 = rng.random_range(GUMBEL_FLOOR..1.0);
                T::cst(-(-u.ln()).ln())
            });
            let g = tape.constant(g);
            tape.add(logits, g)?
        }
        None => logits,
    };
    let scaled = tape.scalar_mul(noisy, 1.0 / tau)?;
    let soft = tape.softmax_channels(scaled)?;
    let mask = tape.straight_through_onehot(soft)?;
    Ok(MaskOutput { logits, soft, mask })
}

/// `(M_high ⊙ F_c, M_low ⊙ F_c)`, the mask broadcast over feature channels.
pub fn split_frequency<T: Scalar>(tape: &mut Tape<T>, f_c: Var, mask: Var) -> Result<(Var, Var)> {
    let (fs, ms) = (tape.shape(f_c), tape.shape(mask));
    if ms != Shape::new(fs.n, 2, fs.h, fs.w) {
        return Err(FameError::shape(
            "split_frequency",
            format!("mask {ms} does not cover features {fs}"),
        ));
    }
    let high = tape.narrow_channels(mask, 0, 1)?;
    let low = tape.narrow_channels(mask, 1, 1)?;
    let f_h = tape.mask_channels(f_c, high)?;
    let f_l = tape.mask_channels(f_c, low)?;
    Ok((f_h, f_l))
}
