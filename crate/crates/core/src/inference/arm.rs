use rand::Rng;

use super::sampling::sample_logits;
use crate::corpus::{PaddedBatch, Vocab};
use crate::error::Result;
use crate::model::{token_logits, ModelWeights};
use crate::scalar::Scalar;

/// Left-to-right next-token predictor.
pub trait NextTokenModel {
    fn max_len(&self) -> usize;

    /// Logits for the token following `prefix`.
    fn next_logits(&self, prefix: &[u32], bos_index: usize) -> Result<Vec<f64>>;
}

impl<T: Scalar> NextTokenModel for ModelWeights<T> {
    fn max_len(&self) -> usize {
        self.config.max_seq_len
    }

    fn next_logits(&self, prefix: &[u32], bos_index: usize) -> Result<Vec<f64>> {
        let b = PaddedBatch::single(prefix, bos_index);
        let l = token_logits(self, &b, None)?.remove(0);
        Ok(l.row(prefix.len() - 1).to_vec())
    }
}

/// Ancestral sampling after `prompt <s>` until `</s>` or `max_new` tokens.
/// Returns the continuation without `</s>` and whether it hit the budget.
pub fn arm_generate<M: NextTokenModel + ?Sized, R: Rng + ?Sized>(
    prompt: &[u32],
    model: &M,
    vocab: &Vocab,
    nucleus_p: Option<f64>,
    max_new: usize,
    rng: &mut R,
) -> Result<(Vec<u32>, bool)> {
    let bos = prompt.len();
    let mut x = prompt.to_vec();
    x.push(vocab.bos);
    let banned = [vocab.pad, vocab.stp, vocab.bos, vocab.mask];
    let budget = max_new.min(model.max_len().saturating_sub(x.len()));
    for _ in 0..budget {
        let logits = model.next_logits(&x, bos)?;
        let tok = sample_logits(&logits, &banned, nucleus_p, rng)?;
        if tok == vocab.eos {
            return Ok((x[bos + 1..].to_vec(), false));
        }
        x.push(tok);
    }
    Ok((x[bos + 1..].to_vec(), true))
}
