//! Batched training objectives with analytic gradients.
//!
//! Every objective returns the batch-mean loss and, when `grads` is given,
//! accumulates its gradient into it.

use rand::Rng;

use super::losses::{stop_loss_from_score, LogLinear};
use crate::corpus::{CleanSequence, PaddedBatch, Vocab};
use crate::error::{Error, Result};
use crate::model::{
    backbone_backward, backbone_forward_train, gather_slots, insertion_head_backward, insertion_head_forward, stop_score,
    ModelWeights, Variant,
};
use crate::scalar::Scalar;
use crate::tensor::{linear, linear_backward, log_sum_exp};

/// Batch-mean loss split into its token and stop parts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub tok: f64,
    pub stop: f64,
}

/// Adds head-input gradients back onto the packed hidden-state gradient.
fn scatter<T: Scalar>(dh: &mut [T], d: usize, rows: &[T], positions: impl Iterator<Item = usize>) {
    for (r, p) in positions.enumerate() {
        for (a, &b) in dh[p * d..(p + 1) * d].iter_mut().zip(&rows[r * d..(r + 1) * d]) {
            *a += b;
        }
    }
}

fn check_targets(batch: &PaddedBatch) -> Result<()> {
    if batch.targets.len() != batch.batch_size() {
        return Err(Error::invalid("insertion batch carries no targets"));
    }
    Ok(())
}

/// ILM objective: joint slot x token cross-entropy against the target
/// insertion distribution plus the stop classifier's cross-entropy.
/// Examples with nothing dropped contribute only to the stop part.
pub fn ilm_objective<T: Scalar>(
    w: &ModelWeights<T>,
    batch: &PaddedBatch,
    grads: Option<&mut ModelWeights<T>>,
) -> Result<LossParts> {
    w.expect_variant(&[Variant::Ilm])?;
    check_targets(batch)?;
    let (v, d) = (w.config.vocab_size, w.config.d_model);
    let bsz = batch.batch_size() as f64;
    let (hidden, cache) = backbone_forward_train(w, batch, None)?;
    let (rows, index) = gather_slots(&hidden, batch);
    let head = w.insertion.as_ref().expect("ilm head");
    let out = insertion_head_forward(head, rows, index.len());

    let mut dlogits = vec![T::zero(); out.logits.len()];
    let mut stop_grads = Vec::with_capacity(batch.batch_size());
    let (mut tok, mut stop) = (0.0, 0.0);
    let mut r0 = 0;
    for i in 0..batch.batch_size() {
        let n_rows = index[r0..].iter().take_while(|(row, _)| *row == i).count();
        let tg = &batch.targets[i];
        let bos = batch.bos_index[i];
        if tg.n_dropped > 0 {
            let block: Vec<f64> = out.logits[r0 * v..(r0 + n_rows) * v].iter().map(|x| x.f64()).collect();
            let z = log_sum_exp(&block);
            let n = tg.n_dropped as f64;
            let mut li = 0.0;
            for t in &tg.slot_targets {
                li += t.count as f64 * (z - block[(t.slot - bos) * v + t.token as usize]);
            }
            tok += li / n;
            let dl = &mut dlogits[r0 * v..(r0 + n_rows) * v];
            for (g, &s) in dl.iter_mut().zip(&block) {
                *g = T::of((s - z).exp() / bsz);
            }
            for t in &tg.slot_targets {
                dl[(t.slot - bos) * v + t.token as usize] -= T::of(t.count as f64 / n / bsz);
            }
        }
        let score = stop_score(w, hidden.at(i, 0)).f64();
        let (ls, ds) = stop_loss_from_score(score, tg.stop_label);
        stop += ls;
        stop_grads.push(ds / bsz);
        r0 += n_rows;
    }
    let parts = LossParts { total: (tok + stop) / bsz, tok: tok / bsz, stop: stop / bsz };

    if let Some(g) = grads {
        let mut dh = vec![T::zero(); hidden.data.len()];
        let dx = insertion_head_backward(head, &out, &dlogits, g.insertion.as_mut().expect("ilm head"));
        let segs = &hidden.packed.segments;
        scatter(&mut dh, d, &dx, index.iter().map(|&(i, k)| segs[i].0 + k));
        let sw = &w.stop.as_ref().expect("stop head").w.data;
        let gs = g.stop.as_mut().expect("stop head");
        for (i, &ds) in stop_grads.iter().enumerate() {
            let p = segs[i].0;
            let h = hidden.at(i, 0);
            let ds_t = T::of(ds);
            for j in 0..d {
                dh[p * d + j] += ds_t * sw[j];
                gs.w.data[j] += ds_t * h[j];
            }
            gs.b.data[0] += ds_t;
        }
        backbone_backward(w, &cache, &dh, g);
    }
    Ok(parts)
}

/// Insertion Transformer objective: per-slot softmax with local averaging,
/// and `slot_eos` as the target of every empty slot. Summed over slots,
/// averaged over the batch.
pub fn it_objective<T: Scalar>(
    w: &ModelWeights<T>,
    batch: &PaddedBatch,
    slot_eos: u32,
    grads: Option<&mut ModelWeights<T>>,
) -> Result<LossParts> {
    w.expect_variant(&[Variant::It])?;
    check_targets(batch)?;
    let (v, d) = (w.config.vocab_size, w.config.d_model);
    let bsz = batch.batch_size() as f64;
    let (hidden, cache) = backbone_forward_train(w, batch, None)?;
    let (rows, index) = gather_slots(&hidden, batch);
    let head = w.insertion.as_ref().expect("it head");
    let out = insertion_head_forward(head, rows, index.len());

    let mut dlogits = vec![T::zero(); out.logits.len()];
    let mut total = 0.0;
    for (r, &(i, k)) in index.iter().enumerate() {
        let row: Vec<f64> = out.logits[r * v..(r + 1) * v].iter().map(|x| x.f64()).collect();
        let z = log_sum_exp(&row);
        let here: Vec<_> = batch.targets[i].slot_targets.iter().filter(|t| t.slot == k).collect();
        let mut q = vec![0.0; v];
        if here.is_empty() {
            q[slot_eos as usize] = 1.0;
        } else {
            let c: u32 = here.iter().map(|t| t.count).sum();
            for t in here {
                q[t.token as usize] += t.count as f64 / c as f64;
            }
        }
        let dl = &mut dlogits[r * v..(r + 1) * v];
        for j in 0..v {
            if q[j] > 0.0 {
                total += q[j] * (z - row[j]);
            }
            dl[j] = T::of(((row[j] - z).exp() - q[j]) / bsz);
        }
    }
    if let Some(g) = grads {
        let mut dh = vec![T::zero(); hidden.data.len()];
        let dx = insertion_head_backward(head, &out, &dlogits, g.insertion.as_mut().expect("it head"));
        let segs = &hidden.packed.segments;
        scatter(&mut dh, d, &dx, index.iter().map(|&(i, k)| segs[i].0 + k));
        backbone_backward(w, &cache, &dh, g);
    }
    let total = total / bsz;
    Ok(LossParts { total, tok: total, stop: 0.0 })
}

/// Cross-entropy through the token head on selected positions.
///
/// `picks` lists `(row, position, target, weight)`; the loss is the
/// weighted sum of pointwise cross-entropies.
fn token_head_objective<T: Scalar>(
    w: &ModelWeights<T>,
    batch: &PaddedBatch,
    time: Option<&[f64]>,
    picks: &[(usize, usize, u32, f64)],
    grads: Option<&mut ModelWeights<T>>,
) -> Result<f64> {
    let (v, d) = (w.config.vocab_size, w.config.d_model);
    let (hidden, cache) = backbone_forward_train(w, batch, time)?;
    let head = w.token.as_ref().expect("token head");
    let mut rows = Vec::with_capacity(picks.len() * d);
    for &(i, p, _, _) in picks {
        rows.extend_from_slice(hidden.at(i, p));
    }
    let logits = linear(&rows, picks.len(), &head.w, Some(&head.b));
    let mut dlogits = vec![T::zero(); logits.len()];
    let mut total = 0.0;
    for (r, &(_, _, target, weight)) in picks.iter().enumerate() {
        let row: Vec<f64> = logits[r * v..(r + 1) * v].iter().map(|x| x.f64()).collect();
        let z = log_sum_exp(&row);
        total += weight * (z - row[target as usize]);
        let dl = &mut dlogits[r * v..(r + 1) * v];
        for j in 0..v {
            dl[j] = T::of(weight * (row[j] - z).exp());
        }
        dl[target as usize] -= T::of(weight);
    }
    if let Some(g) = grads {
        let gt = g.token.as_mut().expect("token head");
        let dx = linear_backward(&rows, &dlogits, picks.len(), &head.w, &mut gt.w, Some(&mut gt.b));
        let mut dh = vec![T::zero(); hidden.data.len()];
        let segs = &hidden.packed.segments;
        scatter(&mut dh, d, &dx, picks.iter().map(|&(i, p, _, _)| segs[i].0 + p));
        backbone_backward(w, &cache, &dh, g);
    }
    Ok(total)
}

/// Next-token cross-entropy averaged over every predicted position in the
/// batch. Only positions from `<s>` onwards predict, so prompts are context.
pub fn arm_objective<T: Scalar>(
    w: &ModelWeights<T>,
    batch: &PaddedBatch,
    grads: Option<&mut ModelWeights<T>>,
) -> Result<LossParts> {
    w.expect_variant(&[Variant::Arm])?;
    let mut picks = Vec::new();
    for i in 0..batch.batch_size() {
        let row = batch.row(i);
        for p in batch.bos_index[i]..row.len().saturating_sub(1) {
            picks.push((i, p, row[p + 1], 1.0));
        }
    }
    if picks.is_empty() {
        return Err(Error::invalid("no valid positions for the ARM loss"));
    }
    let n = picks.len() as f64;
    picks.iter_mut().for_each(|p| p.3 = 1.0 / n);
    let total = token_head_objective(w, batch, None, &picks, grads)?;
    Ok(LossParts { total, tok: total, stop: 0.0 })
}

/// One noised MDM training row.
#[derive(Clone, Debug, PartialEq)]
pub struct MdmExample {
    pub x0: Vec<u32>,
    pub xt: Vec<u32>,
    /// First maskable position (just after `<s>`).
    pub maskable_from: usize,
    pub t: f64,
}

/// `prompt <s> content </s> <pad>...` with the region after `<s>` padded to
/// exactly `region_len` tokens.
pub fn mdm_layout(x: &CleanSequence, region_len: usize, vocab: &Vocab) -> Result<Vec<u32>> {
    let region = &x.ids[x.condition_len + 1..];
    if region.len() > region_len {
        return Err(Error::invalid(format!(
            "solution region of {} tokens exceeds the MDM region length {region_len}",
            region.len()
        )));
    }
    let mut ids = x.ids.clone();
    ids.extend(std::iter::repeat_n(vocab.pad, region_len - region.len()));
    Ok(ids)
}

/// Masks each position after `<s>` independently with probability `1 - alpha_t`.
pub fn mdm_noise<R: Rng + ?Sized>(
    x0: Vec<u32>,
    maskable_from: usize,
    t: f64,
    schedule: LogLinear,
    mask_id: u32,
    rng: &mut R,
) -> MdmExample {
    let p = schedule.mask_prob(t);
    let xt = x0
        .iter()
        .enumerate()
        .map(|(i, &tok)| if i >= maskable_from && rng.random::<f64>() < p { mask_id } else { tok })
        .collect();
    MdmExample { x0, xt, maskable_from, t }
}

/// Masked-diffusion objective: per example `(1/t) * sum of masked-position
/// cross-entropies`, averaged over the batch.
pub fn mdm_objective<T: Scalar>(
    w: &ModelWeights<T>,
    examples: &[MdmExample],
    vocab: &Vocab,
    schedule: LogLinear,
    grads: Option<&mut ModelWeights<T>>,
) -> Result<LossParts> {
    w.expect_variant(&[Variant::Mdm])?;
    let rows: Vec<&[u32]> = examples.iter().map(|e| e.xt.as_slice()).collect();
    let bos: Vec<usize> = examples.iter().map(|e| e.maskable_from.saturating_sub(1)).collect();
    let pad_to = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let batch = PaddedBatch::from_sequences(&rows, &bos, pad_to, vocab.pad)?;
    let times: Vec<f64> = examples.iter().map(|e| e.t).collect();
    let bsz = examples.len() as f64;
    let mut picks = Vec::new();
    for (i, e) in examples.iter().enumerate() {
        for (p, (&a, &b)) in e.x0.iter().zip(&e.xt).enumerate() {
            if b == vocab.mask {
                if p < e.maskable_from {
                    return Err(Error::invalid(format!("position {p} is masked but must survive")));
                }
                picks.push((i, p, a, schedule.weight(e.t) / bsz));
            }
        }
    }
    if picks.is_empty() {
        return Ok(LossParts::default());
    }
    let total = token_head_objective(w, &batch, Some(&times), &picks, grads)?;
    Ok(LossParts { total, tok: total, stop: 0.0 })
}
