//! Adam training loop, checkpoints, training log and evaluation.

mod adam;
mod checkpoint;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, clip_global_norm, AdamConfig, AdamState};
pub use checkpoint::{fingerprint, Checkpoint, RngState};

use crate::data::SamplePair;
use crate::error::{FameError, Result};
use crate::losses::{total_loss, LossBreakdown, LossWeights};
use crate::metrics::{qnr_suite, reduced_metrics, MetricReport, FULL_COLUMNS, REDUCED_COLUMNS};
use crate::model::{FameNet, FameOutput, GateWeights, ParamStore};
use crate::tensor::{Tape, Tensor};

/// File name of the training log inside an output directory.
pub const LOG_FILE: &str = "train_log.csv";
/// File name of the final checkpoint inside an output directory.
pub const FINAL_CHECKPOINT: &str = "checkpoint.fame";
/// File name written when the loss turns non-finite.
pub const EMERGENCY_CHECKPOINT: &str = "checkpoint_emergency.fame";

/// Labels of the expert banks in log and report columns.
pub const BANK_NAMES: [&str; 3] = ["h", "l", "f"];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// `total_epochs` is overridden by `epochs` during training.
    pub loss_weights: LossWeights,
    /// Save a checkpoint every this many epochs; 0 disables periodic saves.
    pub checkpoint_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` leaves gradients untouched.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            lr: 5e-4,
            batch_size: 4,
            seed: 0,
            loss_weights: LossWeights::default(),
            checkpoint_every: 100,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(FameError::config("epochs", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FameError::config("lr", format!("must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(FameError::config("batch_size", "must be at least 1"));
        }
        for (key, b) in [("adam_beta1", self.beta1), ("adam_beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(FameError::config(key, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(FameError::config("adam_eps", "must be positive"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(FameError::config("grad_clip", "must be positive"));
            }
        }
        self.weights().validate()
    }

    /// Loss weights with the annealing horizon tied to `epochs`.
    pub fn weights(&self) -> LossWeights {
        LossWeights { total_epochs: self.epochs, ..self.loss_weights.clone() }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

/// One optimizer step as recorded in the log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub loss: LossBreakdown,
    /// Per bank, how many samples of the batch selected each expert.
    pub histograms: Vec<Vec<usize>>,
    /// Per bank, SCV of the batch-summed gate weights.
    pub scv: Vec<f64>,
    /// High-frequency fraction of the predicted mask; NaN when ablated.
    pub mask_coverage: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub num_experts: usize,
    pub banks: usize,
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn header(&self) -> String {
        let mut cols: Vec<String> =
            ["epoch", "step", "rec", "mask", "load", "alpha_effective", "total"].map(String::from).to_vec();
        for b in &BANK_NAMES[..self.banks] {
            cols.extend((0..self.num_experts).map(|i| format!("hist_{b}{i}")));
        }
        cols.extend(BANK_NAMES[..self.banks].iter().map(|b| format!("scv_{b}")));
        cols.push("mask_coverage".into());
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for r in &self.rows {
            let l = &r.loss;
            let _ = write!(out, "{},{},{},{},{},{},{}", r.epoch, r.step, l.rec, l.mask, l.load, l.alpha_effective, l.total);
            for h in r.histograms.iter().flatten() {
                let _ = write!(out, ",{h}");
            }
            for s in &r.scv {
                let _ = write!(out, ",{s}");
            }
            let _ = writeln!(out, ",{}", r.mask_coverage);
        }
        out
    }

    /// Rows of one epoch.
    pub fn epoch_rows(&self, epoch: usize) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(move |r| r.epoch == epoch)
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// `(σ/μ)²` of `values`, population variance; 0 for an all-zero input.
pub fn importance_scv(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    var / (mean * mean)
}

/// Gate weights of every bank present in `out`, validated against top-k.
fn bank_gates(tape: &Tape<f32>, out: &FameOutput, k: usize) -> Result<Vec<Vec<GateWeights>>> {
    out.gate_weights(tape, k)
}

fn predicted_coverage(tape: &Tape<f32>, out: &FameOutput) -> f64 {
    match out.mask {
        Some(m) => {
            let t = tape.value(m.mask);
            let s = t.shape();
            let high: f64 = (0..s.n).flat_map(|n| t.plane(n, 0)).map(|&v| v as f64).sum();
            high / (s.n * s.plane()) as f64
        }
        None => f64::NAN,
    }
}

struct Batch {
    pan: Tensor<f32>,
    lrms: Tensor<f32>,
    gt: Tensor<f32>,
    label: Tensor<f32>,
}

fn make_batch(data: &[SamplePair], idx: &[usize]) -> Result<Batch> {
    let pick = |f: fn(&SamplePair) -> &Tensor<f32>| {
        let items: Vec<&Tensor<f32>> = idx.iter().map(|&i| f(&data[i])).collect();
        Tensor::stack(&items)
    };
    let labels: Vec<Tensor<f32>> = idx.iter().map(|&i| data[i].mask_label.to_tensor()).collect();
    Ok(Batch {
        pan: pick(|p| &p.pan)?,
        lrms: pick(|p| &p.lrms)?,
        gt: pick(|p| &p.gt)?,
        label: Tensor::stack(&labels.iter().collect::<Vec<_>>())?,
    })
}

/// Trains from freshly initialized `params`. Writes periodic checkpoints,
/// the final checkpoint and the log into `out_dir` when given.
pub fn train(
    net: &FameNet,
    params: ParamStore<f32>,
    data: &[SamplePair],
    cfg: &TrainConfig,
    config_text: &[(String, String)],
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let adam = AdamState::new(&params);
    let start = Checkpoint {
        params,
        adam,
        epoch: 0,
        rng: RngState { seed: cfg.seed, word_pos: 0 },
        fingerprint: fingerprint(&net.cfg),
        config: config_text.to_vec(),
    };
    resume(net, start, data, cfg, out_dir)
}

/// Continues training from `ckpt` up to `cfg.epochs`.
pub fn resume(
    net: &FameNet,
    ckpt: Checkpoint,
    data: &[SamplePair],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(FameError::Contract("training set is empty".into()));
    }
    let mut params = ckpt.restore(net)?;
    let mut adam = ckpt.adam.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(ckpt.rng.seed);
    rng.set_word_pos(ckpt.rng.word_pos);
    let weights = cfg.weights();
    let adam_cfg = cfg.adam();
    let k = net.cfg.top_k;
    let n_experts = net.cfg.num_experts;
    let mut log = TrainLog {
        num_experts: n_experts,
        banks: if net.cfg.ablation_replace_mixture { 2 } else { 3 },
        rows: Vec::new(),
    };
    let snapshot = |params: &ParamStore<f32>, adam: &AdamState<f32>, epoch: usize, rng: &ChaCha8Rng| Checkpoint {
        params: params.clone(),
        adam: adam.clone(),
        epoch,
        rng: RngState { seed: ckpt.rng.seed, word_pos: rng.get_word_pos() },
        fingerprint: ckpt.fingerprint.clone(),
        config: ckpt.config.clone(),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| FameError::io(dir, e))?;
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in ckpt.epoch..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let step_seed = rng.next_u64();
            let batch = make_batch(data, idx)?;
            let mut tape = Tape::new().with_finite_checks(false);
            let bound = params.bind(&mut tape, true);
            let pan = tape.constant(batch.pan);
            let lrms = tape.constant(batch.lrms);
            let gt = tape.constant(batch.gt);
            let label = tape.constant(batch.label);
            let out = net.forward(&mut tape, &bound, pan, lrms, true, step_seed)?;
            let (total, breakdown) = total_loss(&mut tape, &out, gt, label, epoch, &weights)?;
            if !breakdown.total.is_finite() {
                let mut detail = format!("loss {} at epoch {epoch}, step {}", breakdown.total, adam.step + 1);
                if let Some(dir) = out_dir {
                    let path = dir.join(EMERGENCY_CHECKPOINT);
                    snapshot(&params, &adam, epoch, &rng).save(&path)?;
                    let _ = write!(detail, "; state saved to {}", path.display());
                }
                return Err(FameError::numeric("train", detail));
            }
            let gates = bank_gates(&tape, &out, k)?;
            let histograms = gates
                .iter()
                .map(|bank| {
                    let mut h = vec![0; n_experts];
                    bank.iter().flat_map(|g| &g.selected).for_each(|&e| h[e] += 1);
                    h
                })
                .collect();
            let scv = gates
                .iter()
                .map(|bank| {
                    let imp: Vec<f64> =
                        (0..n_experts).map(|e| bank.iter().map(|g| g.weights[e]).sum()).collect();
                    importance_scv(&imp)
                })
                .collect();
            let mask_coverage = predicted_coverage(&tape, &out);

            let grads = tape.backward(total)?;
            let mut grad_tensors: Vec<Tensor<f32>> =
                bound.vars().iter().map(|&v| grads.tensor(&tape, v)).collect();
            if let Some(max) = cfg.grad_clip {
                clip_global_norm(&mut grad_tensors, max);
            }
            adam_step(&mut params, &grad_tensors, &mut adam, &adam_cfg)?;
            log.rows.push(LogRow { epoch, step: adam.step, loss: breakdown, histograms, scv, mask_coverage });
        }
        let done = epoch + 1;
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.epochs {
                snapshot(&params, &adam, done, &rng).save(&dir.join(format!("checkpoint_e{done:05}.fame")))?;
            }
        }
    }

    let checkpoint = snapshot(&params, &adam, cfg.epochs.max(ckpt.epoch), &rng);
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join(FINAL_CHECKPOINT))?;
        let path = dir.join(LOG_FILE);
        fs::write(&path, log.to_csv()).map_err(|e| FameError::io(&path, e))?;
    }
    Ok(TrainOutcome { checkpoint, log })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// PSNR, SSIM, SAM and ERGAS against the ground truth.
    Reduced,
    /// D_λ, D_s and QNR without the ground truth.
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    /// `(bank, SCV of the dataset-summed gate weights)` for every bank.
    pub utilization_scv: Vec<(&'static str, f64)>,
    /// Mean high-frequency fraction of the predicted masks; NaN when ablated.
    pub mask_coverage: f64,
}

/// Identifier of a pair in metric reports.
pub fn pair_id(p: &SamplePair) -> String {
    match p.origin {
        crate::data::Origin::Scene => format!("{}_s{}", p.recipe, p.seed),
        crate::data::Origin::Patch { row, col } => format!("{}_s{}_r{row}_c{col}", p.recipe, p.seed),
    }
}

/// Noise-free evaluation of every pair.
pub fn evaluate(net: &FameNet, params: &ParamStore<f32>, data: &[SamplePair], mode: EvalMode) -> Result<Evaluation> {
    let columns: &[&'static str] = match mode {
        EvalMode::Reduced => &REDUCED_COLUMNS,
        EvalMode::Full => &FULL_COLUMNS,
    };
    let mut report = MetricReport::new(columns);
    let banks = if net.cfg.ablation_replace_mixture { 2 } else { 3 };
    let mut importance = vec![vec![0.0; net.cfg.num_experts]; banks];
    let mut coverage = 0.0;
    for pair in data {
        let mut tape = Tape::new().with_finite_checks(false);
        let bound = params.bind(&mut tape, false);
        let pan = tape.constant(pair.pan.clone());
        let lrms = tape.constant(pair.lrms.clone());
        let out = net.forward(&mut tape, &bound, pan, lrms, false, 0)?;
        for (acc, bank) in importance.iter_mut().zip(bank_gates(&tape, &out, net.cfg.top_k)?) {
            for g in bank {
                acc.iter_mut().zip(&g.weights).for_each(|(a, w)| *a += w);
            }
        }
        coverage += predicted_coverage(&tape, &out);
        let fused = tape.value(out.hrms);
        let values = match mode {
            EvalMode::Reduced => reduced_metrics(fused, &pair.gt, 1.0 / pair.factor as f64)?.to_vec(),
            EvalMode::Full => {
                let q = qnr_suite(fused, &pair.lrms, &pair.pan)?;
                vec![q.d_lambda, q.d_s, q.qnr]
            }
        };
        report.push(pair_id(pair), values);
    }
    let utilization_scv = BANK_NAMES.iter().zip(&importance).map(|(b, imp)| (*b, importance_scv(imp))).collect();
    Ok(Evaluation { report, utilization_scv, mask_coverage: coverage / data.len().max(1) as f64 })
}

/// [`evaluate`] with parameters taken from a checkpoint after the
/// fingerprint check.
pub fn evaluate_checkpoint(net: &FameNet, ckpt: &Checkpoint, data: &[SamplePair], mode: EvalMode) -> Result<Evaluation> {
    evaluate(net, &ckpt.restore(net)?, data, mode)
}
