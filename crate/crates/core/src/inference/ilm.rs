//! The insertion decoding loop for ILM and Insertion Transformer models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sampling::{two_step_sample, SamplerConfig};
use super::state::InsertionState;
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::{score_visible, InsertionLogits, ModelWeights};
use crate::scalar::Scalar;
use crate::tensor::log_sum_exp;

/// Anything that scores insertions into a visible sequence.
pub trait InsertionScorer {
    /// Longest visible sequence (including `<stp>`) the scorer accepts.
    fn max_len(&self) -> usize;

    /// Insertion logits plus the stop probability; `None` for models that
    /// stop through a slot-EOS token instead of a stop head.
    fn score(&self, visible: &[u32], bos_index: usize) -> Result<(InsertionLogits, Option<f64>)>;
}

impl<T: Scalar> InsertionScorer for ModelWeights<T> {
    fn max_len(&self) -> usize {
        self.config.max_seq_len
    }

    fn score(&self, visible: &[u32], bos_index: usize) -> Result<(InsertionLogits, Option<f64>)> {
        score_visible(self, visible, bos_index)
    }
}

/// One inserted token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    /// Visible slot the token went into.
    pub slot: usize,
    pub token: u32,
    /// 0-based index of the token in the sequence right after insertion.
    pub position: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Stopped,
    Inserted(TrajectoryStep),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Final sequence, including template tokens.
    pub tokens: Vec<u32>,
    pub trajectory: Vec<TrajectoryStep>,
    /// The insertion budget ran out before the model stopped.
    pub truncated: bool,
    pub state: InsertionState,
}

/// Per-slot probabilities with disallowed slots and sentinel tokens zeroed,
/// for a scorer with a stop head (joint softmax).
fn ilm_table(logits: &InsertionLogits, mask: &[bool], vocab: &Vocab) -> Result<Vec<f64>> {
    let v = logits.vocab;
    let mut table = vec![0.0; logits.scores.len()];
    let mut live = Vec::new();
    for (k, &m) in mask.iter().enumerate() {
        if m {
            for tok in 0..v {
                if !vocab.is_sentinel(tok as u32) {
                    live.push(logits.scores[k * v + tok]);
                }
            }
        }
    }
    let z = log_sum_exp(&live);
    if !z.is_finite() {
        return Err(Error::NonFinite("insertion normalizer".into()));
    }
    for (k, &m) in mask.iter().enumerate() {
        if m {
            for tok in 0..v {
                if !vocab.is_sentinel(tok as u32) {
                    table[k * v + tok] = (logits.scores[k * v + tok] - z).exp();
                }
            }
        }
    }
    Ok(table)
}

/// IT decoding table: slots whose most likely token is the slot-EOS token
/// are closed; the rest contribute their per-slot probabilities over
/// non-sentinel tokens. `None` means every open slot predicts EOS.
fn it_table(logits: &InsertionLogits, mask: &[bool], vocab: &Vocab) -> Option<Vec<f64>> {
    let v = logits.vocab;
    let mut table = vec![0.0; logits.scores.len()];
    let mut any = false;
    for (k, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let row = logits.row(k);
        let best = row.iter().enumerate().fold(0, |b, (i, &x)| if x > row[b] { i } else { b });
        if best as u32 == vocab.eos {
            continue;
        }
        let z = log_sum_exp(row);
        for tok in 0..v {
            if !vocab.is_sentinel(tok as u32) {
                table[k * v + tok] = (row[tok] - z).exp();
                any = true;
            }
        }
    }
    any.then_some(table)
}

/// One decoding step: stop, or insert one token.
pub fn ilm_step<S: InsertionScorer + ?Sized, R: Rng + ?Sized>(
    state: &mut InsertionState,
    scorer: &S,
    vocab: &Vocab,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<StepOutcome> {
    let visible = state.visible(vocab.stp);
    let mask = state.slot_mask();
    if !mask.iter().any(|&m| m) {
        return Err(Error::Infeasible("no open insertion slot: the infill template is over-constrained".into()));
    }
    let (logits, p_stop) = scorer.score(&visible, state.bos_rank)?;
    let table = match p_stop {
        Some(p) => {
            if p > cfg.stop_threshold {
                return Ok(StepOutcome::Stopped);
            }
            ilm_table(&logits, &mask, vocab)?
        }
        None => match it_table(&logits, &mask, vocab) {
            Some(t) => t,
            None => return Ok(StepOutcome::Stopped),
        },
    };
    let (slot, token) = two_step_sample(&table, logits.vocab, cfg, rng)?;
    state.insert(slot, token as u32);
    Ok(StepOutcome::Inserted(TrajectoryStep { step: 0, slot, token: token as u32, position: slot }))
}

/// Inserts tokens until the model stops or the budget runs out.
pub fn ilm_generate<S: InsertionScorer + ?Sized, R: Rng + ?Sized>(
    template: InsertionState,
    scorer: &S,
    vocab: &Vocab,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Generation> {
    cfg.validate()?;
    let mut state = template;
    state.validate()?;
    let room = scorer.max_len().saturating_sub(state.len() + 1);
    let budget = cfg.max_insertions.map_or(room, |m| m.min(room));
    let mut trajectory = Vec::new();
    let mut truncated = false;
    loop {
        if trajectory.len() == budget {
            // One more look so a model that wants to stop is not flagged.
            let mut probe = state.clone();
            truncated = ilm_step(&mut probe, scorer, vocab, cfg, rng)? != StepOutcome::Stopped;
            break;
        }
        match ilm_step(&mut state, scorer, vocab, cfg, rng)? {
            StepOutcome::Stopped => break,
            StepOutcome::Inserted(mut s) => {
                s.step = trajectory.len();
                trajectory.push(s);
            }
        }
    }
    Ok(Generation { tokens: state.sequence(), trajectory, truncated, state })
}
