//! Reference loss functions in `f64`.
//!
//! These take already-computed probabilities or logits and are what the
//! closed-form tests target. The batched model objectives in
//! [`super::objective`] compute the same quantities together with gradients.

use crate::corpus::SlotTarget;
use crate::error::{Error, Result};
use crate::model::InsertionLogits;
use crate::tensor::log_sum_exp;

/// `-(1/n) sum c(k, v) log p(k, v)` for a joint table laid out `positions x vocab`.
pub fn ilm_token_loss(dist: &[f64], vocab: usize, targets: &[SlotTarget], n_dropped: usize) -> Result<f64> {
    if n_dropped == 0 {
        return Err(Error::invalid("token loss is undefined when nothing was dropped"));
    }
    if targets.is_empty() {
        return Err(Error::invalid("no slot targets"));
    }
    let mut acc = 0.0;
    for t in targets {
        let p = dist[t.slot * vocab + t.token as usize];
        acc -= t.count as f64 * p.ln();
    }
    Ok(acc / n_dropped as f64)
}

/// Binary cross-entropy of the stop classifier.
pub fn ilm_stop_loss(p_stop: f64, stop_label: bool) -> f64 {
    if stop_label {
        -p_stop.ln()
    } else {
        -(1.0 - p_stop).ln()
    }
}

/// Same as [`ilm_stop_loss`] from the pre-sigmoid score, stable for large
/// scores. Returns `(loss, dloss/dscore)`.
pub fn stop_loss_from_score(score: f64, stop_label: bool) -> (f64, f64) {
    let softplus = |x: f64| if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    let p = crate::model::sigmoid(score);
    if stop_label {
        (softplus(-score), p - 1.0)
    } else {
        (softplus(score), p)
    }
}

/// Mean next-token cross-entropy. `logits` is `positions x vocab`; row `i`
/// predicts `targets[i]` and counts only where `mask[i]` holds.
pub fn arm_loss(logits: &[f64], vocab: usize, targets: &[u32], mask: &[bool]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, (&t, &m)) in targets.iter().zip(mask).enumerate() {
        if m {
            let row = &logits[i * vocab..(i + 1) * vocab];
            total += log_sum_exp(row) - row[t as usize];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("no valid positions for the ARM loss"));
    }
    Ok(total / count as f64)
}

/// Log-linear masking schedule `alpha_t = 1 - (1 - eps) t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLinear {
    pub eps: f64,
}

impl Default for LogLinear {
    fn default() -> Self {
        LogLinear { eps: 1e-3 }
    }
}

impl LogLinear {
    pub fn alpha(&self, t: f64) -> f64 {
        1.0 - (1.0 - self.eps) * t
    }

    /// Probability that a token is masked at level `t`.
    pub fn mask_prob(&self, t: f64) -> f64 {
        1.0 - self.alpha(t)
    }

    /// ELBO weight `-alpha'_t / (1 - alpha_t)`, which is exactly `1/t` here.
    pub fn weight(&self, t: f64) -> f64 {
        (1.0 - self.eps) / self.mask_prob(t)
    }
}

/// Weighted masked cross-entropy for one example.
///
/// Positions before `maskable_from` must not be masked in `xt`.
pub fn mdm_loss(
    logits: &[f64],
    vocab: usize,
    x0: &[u32],
    xt: &[u32],
    mask_id: u32,
    maskable_from: usize,
    t: f64,
    schedule: LogLinear,
) -> Result<f64> {
    if x0.len() != xt.len() {
        return Err(Error::invalid("x0 and xt differ in length"));
    }
    let mut acc = 0.0;
    for (i, (&a, &b)) in x0.iter().zip(xt).enumerate() {
        if b != mask_id {
            continue;
        }
        if i < maskable_from || a == mask_id {
            return Err(Error::invalid(format!("position {i} is masked but must survive")));
        }
        let row = &logits[i * vocab..(i + 1) * vocab];
        acc += log_sum_exp(row) - row[a as usize];
    }
    Ok(schedule.weight(t) * acc)
}

/// Insertion Transformer loss with per-slot softmax and local averaging.
///
/// Slots with no dropped tokens are trained towards `slot_eos`.
pub fn it_loss(logits: &InsertionLogits, targets: &[SlotTarget], slot_eos: u32) -> f64 {
    let mut total = 0.0;
    for k in logits.slots() {
        let row = logits.row(k);
        let lse = log_sum_exp(row);
        let here: Vec<&SlotTarget> = targets.iter().filter(|t| t.slot == k).collect();
        if here.is_empty() {
            total += lse - row[slot_eos as usize];
        } else {
            let c: u32 = here.iter().map(|t| t.count).sum();
            let s: f64 = here.iter().map(|t| t.count as f64 * (lse - row[t.token as usize])).sum();
            total += s / c as f64;
        }
    }
    total
}
