use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{PaddedBatch, Vocab};
use crate::error::{Error, Result};
use crate::model::{token_logits, ModelWeights, Variant};
use crate::scalar::Scalar;
use crate::tensor::log_sum_exp;

/// Left-to-right scorer used as the NLL evaluator.
pub trait CausalScorer {
    /// `ids.len() x vocab` logits; row `i` predicts `ids[i + 1]`.
    fn position_logits(&self, ids: &[u32], bos_index: usize) -> Result<Vec<f64>>;
}

impl<T: Scalar> CausalScorer for ModelWeights<T> {
    fn position_logits(&self, ids: &[u32], bos_index: usize) -> Result<Vec<f64>> {
        self.expect_variant(&[Variant::Arm])?;
        Ok(token_logits(self, &PaddedBatch::single(ids, bos_index), None)?.remove(0).scores)
    }
}

/// Mean negative log-likelihood in nats per token of `content` (pads
/// dropped), scored after a fresh `<s>`.
pub fn nll_under<S: CausalScorer + ?Sized>(evaluator: &S, content: &[u32], vocab: &Vocab) -> Result<f64> {
    let toks: Vec<u32> = content.iter().copied().filter(|&t| t != vocab.pad).collect();
    if toks.is_empty() {
        return Err(Error::invalid("cannot score an empty sequence"));
    }
    let mut ids = Vec::with_capacity(toks.len() + 1);
    ids.push(vocab.bos);
    ids.extend_from_slice(&toks);
    let logits = evaluator.position_logits(&ids[..toks.len()], 0)?;
    let v = vocab.len();
    let mut total = 0.0;
    for (i, &tok) in toks.iter().enumerate() {
        let row = &logits[i * v..(i + 1) * v];
        total += log_sum_exp(row) - row[tok as usize];
    }
    Ok(total / toks.len() as f64)
}

/// Shannon entropy (nats) of the empirical unigram distribution of `x`.
pub fn unigram_entropy(x: &[u32]) -> f64 {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for &t in x {
        *counts.entry(t).or_default() += 1;
    }
    let n = x.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    /// Evaluator NLL, nats per token, averaged over samples.
    pub nll: f64,
    /// Unigram entropy in nats, averaged over samples.
    pub entropy: f64,
    pub mean_len: f64,
    pub n_samples: usize,
    /// Empty samples, which have no NLL.
    pub n_excluded: usize,
}

pub fn generation_metrics<S: CausalScorer + ?Sized>(
    evaluator: &S,
    samples: &[Vec<u32>],
    vocab: &Vocab,
) -> Result<GenerationMetrics> {
    let mut m = GenerationMetrics::default();
    let mut len_total = 0usize;
    for s in samples {
        len_total += s.len();
        if s.is_empty() {
            m.n_excluded += 1;
            continue;
        }
        m.nll += nll_under(evaluator, s, vocab)?;
        m.entropy += unigram_entropy(s);
        m.n_samples += 1;
    }
    if m.n_samples == 0 {
        return Err(Error::invalid(format!("all {} samples are empty; nothing to score", samples.len())));
    }
    m.nll /= m.n_samples as f64;
    m.entropy /= m.n_samples as f64;
    m.mean_len = len_total as f64 / samples.len() as f64;
    Ok(m)
}

/// Percentage changes after infilling against the ground truth and against
/// the input with the blanks removed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InfillMetrics {
    pub d_nll_gt: f64,
    pub d_ent_gt: f64,
    pub d_nll_inp: f64,
    pub d_ent_inp: f64,
}

pub fn pct_delta(value: f64, reference: f64) -> Result<f64> {
    if reference == 0.0 || !reference.is_finite() {
        return Err(Error::invalid("reference metric is zero"));
    }
    Ok(100.0 * (value - reference) / reference)
}

pub fn infill_deltas<S: CausalScorer + ?Sized>(
    infilled: &[u32],
    gt: &[u32],
    inp: &[u32],
    evaluator: &S,
    vocab: &Vocab,
) -> Result<InfillMetrics> {
    let nll = nll_under(evaluator, infilled, vocab)?;
    let ent = unigram_entropy(infilled);
    Ok(InfillMetrics {
        d_nll_gt: pct_delta(nll, nll_under(evaluator, gt, vocab)?)?,
        d_ent_gt: pct_delta(ent, unigram_entropy(gt))?,
        d_nll_inp: pct_delta(nll, nll_under(evaluator, inp, vocab)?)?,
        d_ent_inp: pct_delta(ent, unigram_entropy(inp))?,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InfillSummary {
    pub mean: InfillMetrics,
    pub n: usize,
    pub n_excluded: usize,
}

/// Averages per-example deltas; examples whose reference is zero are
/// excluded and counted.
pub fn summarize_infill(results: &[Result<InfillMetrics>]) -> InfillSummary {
    let mut s = InfillSummary::default();
    for r in results {
        match r {
            Ok(m) => {
                s.mean.d_nll_gt += m.d_nll_gt;
                s.mean.d_ent_gt += m.d_ent_gt;
                s.mean.d_nll_inp += m.d_nll_inp;
                s.mean.d_ent_inp += m.d_ent_inp;
                s.n += 1;
            }
            Err(_) => s.n_excluded += 1,
        }
    }
    if s.n > 0 {
        let n = s.n as f64;
        s.mean.d_nll_gt /= n;
        s.mean.d_ent_gt /= n;
        s.mean.d_nll_inp /= n;
        s.mean.d_ent_inp /= n;
    }
    s
}
