//! Tau-leaping unmasking for masked diffusion models.

use rand::Rng;

use super::sampling::sample_logits;
use crate::corpus::{PaddedBatch, Vocab};
use crate::error::{Error, Result};
use crate::model::{token_logits, ModelWeights};
use crate::scalar::Scalar;

/// Anything that predicts clean-token logits for every position of a
/// partially masked sequence at noise level `t`.
pub trait Denoiser {
    /// `xt.len() x vocab` logits.
    fn logits(&self, xt: &[u32], bos_index: usize, t: f64) -> Result<Vec<f64>>;
}

impl<T: Scalar> Denoiser for ModelWeights<T> {
    fn logits(&self, xt: &[u32], bos_index: usize, t: f64) -> Result<Vec<f64>> {
        let b = PaddedBatch::single(xt, bos_index);
        Ok(token_logits(self, &b, Some(&[t]))?.remove(0).scores)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MdmSampler {
    pub steps: usize,
    /// Take the most likely token instead of sampling when a position unmasks.
    pub greedy: bool,
}

/// Unmasks the `region_len` positions after `prompt <s>` over `steps`
/// uniform levels `t_j = 1 - j/steps`. Between `t` and `s < t` each masked
/// position unmasks with probability `(t - s)/t`, which is
/// `(alpha_s - alpha_t)/(1 - alpha_t)` for the log-linear schedule up to its
/// `eps`; the last step unmasks everything.
///
/// Returns the full sequence and the number of masked positions after each step.
pub fn mdm_generate<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    prompt: &[u32],
    region_len: usize,
    sampler: MdmSampler,
    denoiser: &D,
    vocab: &Vocab,
    rng: &mut R,
) -> Result<(Vec<u32>, Vec<usize>)> {
    let mut x = prompt.to_vec();
    x.push(vocab.bos);
    x.extend(std::iter::repeat_n(vocab.mask, region_len));
    let banned = [vocab.mask, vocab.stp, vocab.bos];
    let counts = denoise(&mut x, prompt.len(), 1.0, sampler, denoiser, vocab, &banned, rng)?;
    Ok((x, counts))
}

/// Fills the `<mask>` positions of an otherwise clean row (the blanks of an
/// infill template). Sentinels are never proposed. The time grid starts at
/// the masked fraction of the region after `<s>` rather than at 1.
pub fn mdm_infill<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    row: &[u32],
    bos_index: usize,
    sampler: MdmSampler,
    denoiser: &D,
    vocab: &Vocab,
    rng: &mut R,
) -> Result<Vec<u32>> {
    let mut x = row.to_vec();
    let banned = [vocab.pad, vocab.stp, vocab.bos, vocab.eos, vocab.mask];
    let region = x.len() - bos_index - 1;
    let masked = x[bos_index + 1..].iter().filter(|&&t| t == vocab.mask).count();
    let t0 = (masked as f64 / region.max(1) as f64).clamp(1e-3, 1.0);
    denoise(&mut x, bos_index, t0, sampler, denoiser, vocab, &banned, rng)?;
    Ok(x)
}

#[allow(clippy::too_many_arguments)]
fn denoise<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    x: &mut [u32],
    bos: usize,
    t0: f64,
    sampler: MdmSampler,
    denoiser: &D,
    vocab: &Vocab,
    banned: &[u32],
    rng: &mut R,
) -> Result<Vec<usize>> {
    if sampler.steps == 0 {
        return Err(Error::Config("MDM sampling needs at least one step".into()));
    }
    let v = vocab.len();
    let mut masked_counts = Vec::with_capacity(sampler.steps);
    for j in 0..sampler.steps {
        let t = t0 * (1.0 - j as f64 / sampler.steps as f64);
        let s = t0 * (1.0 - (j + 1) as f64 / sampler.steps as f64);
        let p_unmask = if j + 1 == sampler.steps { 1.0 } else { (t - s) / t };
        let chosen: Vec<usize> =
            (bos + 1..x.len()).filter(|&i| x[i] == vocab.mask && rng.random::<f64>() < p_unmask).collect();
        if !chosen.is_empty() {
            let logits = denoiser.logits(x, bos, t)?;
            for i in chosen {
                let row = &logits[i * v..(i + 1) * v];
                let nucleus = if sampler.greedy { Some(1e-9) } else { None };
                x[i] = sample_logits(row, banned, nucleus, rng)?;
            }
        }
        masked_counts.push(x.iter().filter(|&&t| t == vocab.mask).count());
    }
    Ok(masked_counts)
}

/// Solution tokens of an MDM row: everything after `<s>` up to the first
/// `</s>`, with pads dropped.
pub fn mdm_solution(x: &[u32], bos_index: usize, vocab: &Vocab) -> Vec<u32> {
    x[bos_index + 1..].iter().take_while(|&&t| t != vocab.eos).copied().filter(|&t| t != vocab.pad).collect()
}
