use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::losses::LogLinear;
use super::objective::{arm_objective, ilm_objective, it_objective, mdm_layout, mdm_noise, mdm_objective, LossParts};
use super::optim::{clip_grad_norm, AdamW};
use crate::corpus::{batch, build_noised_example, sample_drop_mask, CleanSequence, PaddedBatch, Vocab};
use crate::error::{Error, Result};
use crate::model::{read_archive, write_archive, ModelWeights, Variant};
use crate::scalar::Scalar;
use crate::seeding::{rng_for, stream};
use crate::tensor::Tensor;

/// Smallest MDM noise level drawn during training; keeps the `1/t` weight bounded.
pub const MDM_T_MIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub variant: Variant,
    pub eval_every: u64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub checkpoint_every: u64,
}

fn default_weight_decay() -> f64 {
    0.01
}

impl TrainConfig {
    pub fn new(variant: Variant) -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 64,
            max_steps: 50_000,
            grad_clip: Some(1.0),
            seed: 0,
            variant,
            eval_every: 1000,
            weight_decay: default_weight_decay(),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return Err(Error::Config(format!("weight_decay must be in [0, 1), got {}", self.weight_decay)));
        }
        Ok(())
    }
}

/// Per-step training losses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub total: f64,
    pub tok_component: f64,
    pub stop_component: f64,
    pub grad_norm: f64,
}

/// A training corpus plus what is needed to batch it.
#[derive(Clone, Debug)]
pub struct TrainSet {
    pub sequences: Vec<CleanSequence>,
    pub vocab: Vocab,
    /// Fixed solution-region length for MDM rows.
    pub mdm_region: usize,
}

impl TrainSet {
    pub fn new(sequences: Vec<CleanSequence>, vocab: Vocab) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::invalid("training corpus is empty"));
        }
        for s in &sequences {
            s.validate(&vocab)?;
        }
        let mdm_region = sequences.iter().map(|s| s.ids.len() - s.condition_len - 1).max().unwrap_or(1);
        Ok(TrainSet { sequences, vocab, mdm_region })
    }
}

/// Weights, optimizer moments and the number of completed steps; this is
/// everything needed to resume.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub weights: ModelWeights<T>,
    pub opt: AdamW<T>,
    pub step: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(weights: ModelWeights<T>, cfg: &TrainConfig) -> Self {
        let opt = AdamW::new(&weights, cfg.weight_decay);
        TrainState { weights, opt, step: 0 }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut named: Vec<(String, &Tensor<T>)> = self.weights.named();
        named.extend(self.opt.m.named().into_iter().map(|(n, t)| (format!("adam.m.{n}"), t)));
        named.extend(self.opt.v.named().into_iter().map(|(n, t)| (format!("adam.v.{n}"), t)));
        let extra = serde_json::json!({ "step": self.step, "weight_decay": self.opt.weight_decay });
        write_archive(path, &self.weights.config, &named, extra)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut archive = read_archive::<T>(path)?;
        archive.config.validate()?;
        let mut weights = ModelWeights::<T>::init_shell(archive.config.clone());
        archive.fill("", &mut weights)?;
        let mut opt = AdamW::new(&weights, 0.0);
        archive.fill("adam.m.", &mut opt.m)?;
        archive.fill("adam.v.", &mut opt.v)?;
        let step = archive.extra.get("step").and_then(|v| v.as_u64()).ok_or_else(|| {
            Error::CheckpointFormat("training state has no step counter".into())
        })?;
        opt.weight_decay = archive.extra.get("weight_decay").and_then(|v| v.as_f64()).unwrap_or(0.01);
        Ok(TrainState { weights, opt, step })
    }
}

/// Dataset indices for a step: consecutive slices of per-epoch permutations.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch_size);
    let mut g = step as usize * batch_size;
    let mut cached: Option<(usize, Vec<usize>)> = None;
    while out.len() < batch_size {
        let epoch = g / n;
        if cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng_for(seed, &[stream::BATCH_ORDER, epoch as u64]));
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().unwrap().1[g % n]);
        g += 1;
    }
    out
}

fn dump(vocab: &Vocab, rows: &[&CleanSequence]) -> String {
    rows.iter().map(|s| vocab.decode(&s.ids)).collect::<Vec<_>>().join(" | ")
}

/// Loss (and gradient) of one step's batch, noised with `rng`.
pub fn batch_objective<T: Scalar, R: Rng + ?Sized>(
    w: &ModelWeights<T>,
    data: &TrainSet,
    rows: &[&CleanSequence],
    rng: &mut R,
    grads: Option<&mut ModelWeights<T>>,
) -> Result<LossParts> {
    let vocab = &data.vocab;
    match w.config.variant {
        Variant::Ilm | Variant::It => {
            let examples = rows
                .iter()
                .map(|x| Ok(build_noised_example(x, &sample_drop_mask(x, rng)?, vocab)))
                .collect::<Result<Vec<_>>>()?;
            let pad_to = examples.iter().map(|e| e.visible.len()).max().unwrap_or(0);
            let b = batch(&examples, pad_to, vocab.pad)?;
            if w.config.variant == Variant::Ilm {
                ilm_objective(w, &b, grads)
            } else {
                it_objective(w, &b, vocab.eos, grads)
            }
        }
        Variant::Arm => {
            let seqs: Vec<&[u32]> = rows.iter().map(|x| x.ids.as_slice()).collect();
            let bos: Vec<usize> = rows.iter().map(|x| x.condition_len).collect();
            let pad_to = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
            arm_objective(w, &PaddedBatch::from_sequences(&seqs, &bos, pad_to, vocab.pad)?, grads)
        }
        Variant::Mdm => {
            let schedule = LogLinear::default();
            // stratified noise levels across the batch reduce estimator variance
            let u: f64 = rng.random();
            let b = rows.len() as f64;
            let examples = rows
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let frac = (u + i as f64 / b).fract();
                    let t = MDM_T_MIN + (1.0 - MDM_T_MIN) * (1.0 - frac);
                    let ids = mdm_layout(x, data.mdm_region, vocab)?;
                    Ok(mdm_noise(ids, x.condition_len + 1, t, schedule, vocab.mask, rng))
                })
                .collect::<Result<Vec<_>>>()?;
            mdm_objective(w, &examples, vocab, schedule, grads)
        }
    }
}

/// Runs one optimizer update and advances `state.step`.
pub fn train_step<T: Scalar>(state: &mut TrainState<T>, cfg: &TrainConfig, data: &TrainSet) -> Result<LossReport> {
    let step = state.step;
    let idx = batch_indices(data.sequences.len(), cfg.batch_size, cfg.seed, step);
    let rows: Vec<&CleanSequence> = idx.iter().map(|&i| &data.sequences[i]).collect();
    let mut rng = rng_for(cfg.seed, &[stream::NOISE, step]);
    let mut grads = state.weights.zeros_like();
    let parts = batch_objective(&state.weights, data, &rows, &mut rng, Some(&mut grads))?;
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss {} at step {step}; batch: {}",
            parts.total,
            dump(&data.vocab, &rows)
        )));
    }
    let norm = match cfg.grad_clip {
        Some(c) => clip_grad_norm(&mut grads, c),
        None => super::optim::grad_norm(&grads),
    };
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("gradient norm at step {step}; batch: {}", dump(&data.vocab, &rows))));
    }
    state.opt.step(&mut state.weights, &grads, cfg.lr, step + 1);
    state.step += 1;
    Ok(LossReport { step: state.step, total: parts.total, tok_component: parts.tok, stop_component: parts.stop, grad_norm: norm })
}

/// Trains until `cfg.max_steps` updates have been applied, resuming from
/// `state.step`. `on_step` sees every report and the updated state; it is
/// where evaluation and checkpointing hook in.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    data: &TrainSet,
    state: &mut TrainState<T>,
    mut on_step: impl FnMut(&LossReport, &TrainState<T>) -> Result<()>,
) -> Result<Vec<LossReport>> {
    cfg.validate()?;
    if state.weights.config.variant != cfg.variant {
        return Err(Error::VariantMismatch {
            expected: cfg.variant.to_string(),
            actual: state.weights.config.variant.to_string(),
        });
    }
    if state.weights.config.vocab_size != data.vocab.len() {
        return Err(Error::Config(format!(
            "model vocab size {} does not match corpus vocab size {}",
            state.weights.config.vocab_size,
            data.vocab.len()
        )));
    }
    let mut reports = Vec::new();
    while state.step < cfg.max_steps {
        let r = train_step(state, cfg, data)?;
        on_step(&r, state)?;
        reports.push(r);
    }
    Ok(reports)
}
