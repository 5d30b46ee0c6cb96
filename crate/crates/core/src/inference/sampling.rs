//! Categorical sampling with top-k and nucleus filters.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    /// Sample `(slot, token)` directly from the joint table.
    Joint,
    /// Slot from the (top-k filtered) marginal, then token from the
    /// (nucleus filtered) conditional row.
    TwoStep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: SampleMode,
    pub top_k: Option<usize>,
    pub nucleus_p: Option<f64>,
    /// Stop when the stop probability exceeds this value.
    pub stop_threshold: f64,
    /// Defaults to `max_seq_len - 1 - template length`.
    pub max_insertions: Option<usize>,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            mode: SampleMode::TwoStep,
            top_k: None,
            nucleus_p: None,
            stop_threshold: 0.5,
            max_insertions: None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    /// Argmax slot, then argmax token (ties are sampled uniformly).
    pub fn greedy() -> Self {
        SamplerConfig { top_k: Some(1), nucleus_p: Some(1e-9), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) {
            return Err(Error::Config(format!("stop threshold must be in (0, 1), got {}", self.stop_threshold)));
        }
        if let Some(p) = self.nucleus_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("nucleus_p must be in (0, 1], got {p}")));
            }
        }
        if self.top_k == Some(0) {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Zeroes every weight below the k-th largest; entries tied with it are kept.
pub fn top_k_filter(weights: &mut [f64], k: usize) {
    if k == 0 || k >= weights.len() {
        return;
    }
    let mut sorted: Vec<f64> = weights.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let cut = sorted[k - 1];
    weights.iter_mut().filter(|w| **w < cut).for_each(|w| *w = 0.0);
}

/// Keeps the smallest set of highest weights whose share reaches `p`, plus
/// anything tied with the last kept weight.
pub fn nucleus_filter(weights: &mut [f64], p: f64) {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || p >= 1.0 {
        return;
    }
    let mut sorted: Vec<f64> = weights.iter().copied().filter(|&w| w > 0.0).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut cut = sorted[sorted.len() - 1];
    for &w in &sorted {
        acc += w;
        if acc >= p * total {
            cut = w;
            break;
        }
    }
    weights.iter_mut().filter(|w| **w < cut).for_each(|w| *w = 0.0);
}

/// Draws an index proportionally to nonnegative `weights`.
pub fn sample_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let dist = WeightedIndex::new(weights).map_err(|e| Error::NonFinite(format!("sampling weights: {e}")))?;
    Ok(dist.sample(rng))
}

/// Samples `(row, column)` from a nonnegative `rows x cols` table.
pub fn two_step_sample<R: Rng + ?Sized>(
    table: &[f64],
    cols: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<(usize, usize)> {
    match cfg.mode {
        SampleMode::Joint => {
            let i = sample_weighted(table, rng)?;
            Ok((i / cols, i % cols))
        }
        SampleMode::TwoStep => {
            let mut marginal: Vec<f64> = table.chunks_exact(cols).map(|r| r.iter().sum()).collect();
            if let Some(k) = cfg.top_k {
                top_k_filter(&mut marginal, k);
            }
            let row = sample_weighted(&marginal, rng)?;
            let mut cond = table[row * cols..(row + 1) * cols].to_vec();
            if let Some(p) = cfg.nucleus_p {
                nucleus_filter(&mut cond, p);
            }
            Ok((row, sample_weighted(&cond, rng)?))
        }
    }
}

/// Samples one token from logits with optional nucleus filtering. Entries in
/// `banned` are never drawn.
pub fn sample_logits<R: Rng + ?Sized>(logits: &[f64], banned: &[u32], nucleus_p: Option<f64>, rng: &mut R) -> Result<u32> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| !banned.contains(&(*i as u32)))
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &x)| if banned.contains(&(i as u32)) { 0.0 } else { (x - max).exp() })
        .collect();
    if let Some(p) = nucleus_p {
        nucleus_filter(&mut w, p);
    }
    Ok(sample_weighted(&w, rng)? as u32)
}
