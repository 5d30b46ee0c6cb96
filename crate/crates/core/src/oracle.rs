//! Brute-force ground truth for tiny instances.
//!
//! [`exact_posterior`] computes the one-step reverse distribution of the
//! drop-one-token chain by Bayes' rule over every intermediate sequence, in
//! exact rational arithmetic, without using the `corpus` target builder.

use std::collections::HashMap;

use num_integer::Integer;
use num_rational::Ratio;
use num_traits::{FromPrimitive, One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_noised_example, CleanSequence, DropMask, NoisedExample, Vocab};
use crate::error::{Error, Result};
use crate::seeding::mix;

pub const MAX_SWEEP_LEN: usize = 6;

fn is_subsequence(small: &[u32], big: &[u32]) -> bool {
    let mut it = big.iter();
    small.iter().all(|s| it.any(|b| b == s))
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// `q(x_{t-1} | x_t, x_0)` as `(visible slot, token, probability)` sorted by
/// `(slot, token)`, where `xt` is the surviving sequence (no `<stp>`).
///
/// Every candidate `x_{t-1}` is a subsequence of `x0` one token longer than
/// `xt` that keeps the prompt and sentinels. Under uniform one-at-a-time
/// dropping its prior is its number of embeddings over `C(L, |x_{t-1}|)`
/// and the forward kernel is the fraction of its droppable positions whose
/// removal yields `xt`.
pub fn exact_posterior<I>(x0: &CleanSequence, xt: &[u32]) -> Result<Vec<(usize, u32, Ratio<I>)>>
where
    I: Integer + Clone + FromPrimitive,
{
    let content = x0.content();
    let mut sorted = content.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("exact posterior needs a sequence without repeated tokens"));
    }
    let head = x0.condition_len + 1;
    if xt.len() < head + 1
        || xt[..head] != x0.ids[..head]
        || xt.last() != x0.ids.last()
        || !is_subsequence(&xt[head..xt.len() - 1], content)
    {
        return Err(Error::invalid("xt is not a noised version of x0"));
    }
    let l = content.len();
    let kept = xt.len() - head - 1;
    if kept == l {
        return Ok(Vec::new());
    }
    let q = |n: u64| I::from_u64(n).expect("small integer");
    let size = kept + 1;
    let xt_content = &xt[head..xt.len() - 1];
    // distinct candidate contents and their embedding counts
    let mut prior: HashMap<Vec<u32>, u64> = HashMap::new();
    for subset in 0u32..(1 << l) {
        if subset.count_ones() as usize != size {
            continue;
        }
        let cand: Vec<u32> = (0..l).filter(|i| subset >> i & 1 == 1).map(|i| content[i]).collect();
        *prior.entry(cand).or_default() += 1;
    }
    let total = binomial(l, size);
    let mut post: Vec<(usize, u32, Ratio<I>)> = Vec::new();
    let mut z = Ratio::<I>::zero();
    for (cand, ways) in prior {
        let hits = (0..size)
            .filter(|&j| cand[..j].iter().chain(&cand[j + 1..]).eq(xt_content.iter()))
            .count() as u64;
        if hits == 0 {
            continue;
        }
        let w = Ratio::new(q(ways), q(total)) * Ratio::new(q(hits), q(size as u64));
        // the first position where cand departs from xt holds the new token;
        // it goes after the survivor before it, whose visible index is head + j
        let j = (0..size).find(|&j| j == kept || cand[j] != xt_content[j]).unwrap();
        let slot = head + j;
        z = z + w.clone();
        match post.iter_mut().find(|(s, t, _)| *s == slot && *t == cand[j]) {
            Some(e) => e.2 = e.2.clone() + w,
            None => post.push((slot, cand[j], w)),
        }
    }
    for e in &mut post {
        e.2 = e.2.clone() / z.clone();
    }
    post.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(post)
}

/// The corpus targets of `ex` as exact ratios `count / n`.
pub fn corpus_targets<I: Integer + Clone + FromPrimitive>(ex: &NoisedExample) -> Vec<(usize, u32, Ratio<I>)> {
    let q = |n: u64| I::from_u64(n).expect("small integer");
    ex.slot_targets
        .iter()
        .map(|t| (t.slot, t.token, Ratio::new(q(t.count as u64), q(ex.n_dropped as u64))))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub len: usize,
    pub sequences: usize,
    pub masks: usize,
    pub mismatches: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub first_mismatch: Option<String>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.mismatches == 0)
    }
}

fn for_each_arrangement(alphabet: usize, len: usize, f: &mut dyn FnMut(&[u32])) {
    fn rec(alphabet: usize, len: usize, cur: &mut Vec<u32>, used: &mut [bool], f: &mut dyn FnMut(&[u32])) {
        if cur.len() == len {
            f(cur);
            return;
        }
        for t in 0..alphabet {
            if !used[t] {
                used[t] = true;
                cur.push(t as u32);
                rec(alphabet, len, cur, used, f);
                cur.pop();
                used[t] = false;
            }
        }
    }
    rec(alphabet, len, &mut Vec::new(), &mut vec![false; alphabet], f);
}

/// Compares corpus targets with the exact posterior for every non-repeating
/// sequence of length `1..=max_len` over `vocab_size` tokens and every drop
/// mask. `tamper` may alter each corpus example first (for mutation checks).
pub fn sweep(max_len: usize, vocab_size: usize, mut tamper: impl FnMut(&mut NoisedExample)) -> Result<SweepReport> {
    if max_len > MAX_SWEEP_LEN {
        return Err(Error::Config(format!("oracle sweep is limited to max_len <= {MAX_SWEEP_LEN}")));
    }
    let vocab = Vocab::new((0..vocab_size).map(|i| format!("t{i}")))?;
    let first = vocab.len() - vocab_size;
    let mut report = SweepReport::default();
    for len in 1..=max_len.min(vocab_size) {
        let mut row = SweepRow { len, ..Default::default() };
        let mut err = None;
        for_each_arrangement(vocab_size, len, &mut |arr| {
            if err.is_some() {
                return;
            }
            row.sequences += 1;
            let ids: Vec<u32> = arr.iter().map(|&t| t + first as u32).collect();
            let x0 = CleanSequence::unconditioned(&ids, &vocab);
            for bits in 0u32..(1 << len) {
                row.masks += 1;
                let mask = DropMask::from_bits((0..len).map(|i| bits >> i & 1 == 1).collect());
                let mut ex = build_noised_example(&x0, &mask, &vocab);
                tamper(&mut ex);
                let got = corpus_targets::<i64>(&ex);
                match exact_posterior::<i64>(&x0, &ex.visible[1..]) {
                    Ok(want) if want == got => {}
                    Ok(want) => {
                        row.mismatches += 1;
                        if report.first_mismatch.is_none() {
                            report.first_mismatch = Some(format!(
                                "x0 `{}` mask {bits:0len$b}: corpus {got:?} oracle {want:?}",
                                vocab.decode(&ids)
                            ));
                        }
                    }
                    Err(e) => err = Some(e),
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        report.rows.push(row);
    }
    Ok(report)
}

/// Reverse model whose insertion logits are a fixed pseudo-random function
/// of `(visible, slot, token)`, scaled by `scale`. Scale 0 is uniform.
#[derive(Clone, Copy, Debug)]
pub struct TabularModel {
    pub seed: u64,
    pub scale: f64,
}

impl TabularModel {
    /// Log-probabilities over the open slots of `visible` and the given
    /// tokens, as `(slot, token) -> log p`, normalized jointly.
    pub fn log_probs(&self, visible: &[u32], bos_index: usize, tokens: &[u32]) -> HashMap<(usize, u32), f64> {
        let state = mix(self.seed, &visible.iter().map(|&t| t as u64).collect::<Vec<_>>());
        let mut scores = Vec::new();
        for slot in bos_index..visible.len() - 1 {
            for &tok in tokens {
                let h = mix(state, &[slot as u64, tok as u64]);
                let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                scores.push(((slot, tok), self.scale * (2.0 * u - 1.0)));
            }
        }
        let z = crate::tensor::log_sum_exp(&scores.iter().map(|s| s.1).collect::<Vec<_>>());
        scores.into_iter().map(|(k, s)| (k, s - z)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceProbe {
    pub naive_mean: f64,
    pub naive_var: f64,
    pub dtarget_mean: f64,
    pub dtarget_var: f64,
    pub n_samples: usize,
}

impl VarianceProbe {
    pub fn ratio(&self) -> f64 {
        self.naive_var / self.dtarget_var
    }

    pub fn naive_stderr(&self) -> f64 {
        (self.naive_var / self.n_samples as f64).sqrt()
    }
}

/// Monte Carlo over full drop trajectories of `x0` (one token per step until
/// the content is empty). The naive loss scores the single token actually
/// reinserted at each step; the d-target loss scores the exact reverse
/// distribution at each visited state. Both have the same mean.
pub fn elbo_mc_variance_probe<R: Rng + ?Sized>(
    x0: &CleanSequence,
    model: &TabularModel,
    vocab: &Vocab,
    n_samples: usize,
    rng: &mut R,
) -> VarianceProbe {
    let tokens: Vec<u32> = (0..vocab.len() as u32).filter(|&t| !vocab.is_sentinel(t)).collect();
    let drop = x0.droppable();
    let l = drop.len();
    let (mut naive, mut dtarget) = (Vec::with_capacity(n_samples), Vec::with_capacity(n_samples));
    let mut order: Vec<usize> = (0..l).collect();
    for _ in 0..n_samples {
        order.shuffle(rng);
        let mut bits = vec![false; l];
        let (mut a, mut b) = (0.0, 0.0);
        for &p in &order {
            bits[p] = true;
            let ex = build_noised_example(x0, &DropMask::from_bits(bits.clone()), vocab);
            let lp = model.log_probs(&ex.visible, ex.bos_index, &tokens);
            // survivors before the reinserted token, counting the prompt and <s>
            let slot = x0.condition_len + 1 + (0..p).filter(|&i| !bits[i]).count();
            a -= lp[&(slot, x0.ids[drop.start + p])];
            b -= ex.target_distribution().iter().map(|&(k, v, d)| d * lp[&(k, v)]).sum::<f64>();
        }
        naive.push(a);
        dtarget.push(b);
    }
    let stats = |x: &[f64]| {
        let n = x.len() as f64;
        // shifted by the first draw so a constant estimator has variance exactly 0
        let k = x.first().copied().unwrap_or(0.0);
        let m = x.iter().map(|v| v - k).sum::<f64>() / n;
        (k + m, x.iter().map(|v| (v - k - m) * (v - k - m)).sum::<f64>() / (n - 1.0).max(1.0))
    };
    let (naive_mean, naive_var) = stats(&naive);
    let (dtarget_mean, dtarget_var) = stats(&dtarget);
    VarianceProbe { naive_mean, naive_var, dtarget_mean, dtarget_var, n_samples }
}

/// Posterior over the next insertion given only the noised state, mixing
/// the exact posteriors of every clean sequence in `corpus` that could
/// have produced it: `sum_x0 P(x0 | xt) q(. | xt, x0)` with `P(x0)`
/// proportional to `weights` and `n ~ U{0..L}`.
pub fn mixture_posterior(
    corpus: &[(CleanSequence, u64)],
    xt: &[u32],
) -> Result<Vec<(usize, u32, Ratio<i64>)>> {
    let mut acc: Vec<(usize, u32, Ratio<i64>)> = Vec::new();
    let mut z = Ratio::<i64>::zero();
    for (x0, w) in corpus {
        let Ok(post) = exact_posterior::<i64>(x0, xt) else { continue };
        if post.is_empty() {
            continue;
        }
        let l = x0.content().len();
        let n = l + 1 - (xt.len() - x0.condition_len - 1);
        // drop masks of x0 that leave exactly xt; 1 for distinct tokens
        let target = &xt[x0.condition_len + 1..xt.len() - 1];
        let embeddings = (0u32..(1 << l))
            .filter(|bits| bits.count_ones() as usize == n)
            .filter(|bits| (0..l).filter(|i| bits >> i & 1 == 0).map(|i| x0.content()[i]).eq(target.iter().copied()))
            .count() as i64;
        let like = Ratio::new(*w as i64 * embeddings, (l as i64 + 1) * binomial(l, n) as i64);
        z += like;
        for (s, t, p) in post {
            match acc.iter_mut().find(|e| e.0 == s && e.1 == t) {
                Some(e) => e.2 += like * p,
                None => acc.push((s, t, like * p)),
            }
        }
    }
    if z.is_zero() {
        return Err(Error::invalid("no corpus sequence explains xt"));
    }
    for e in &mut acc {
        e.2 /= z;
    }
    acc.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    debug_assert!(acc.iter().fold(Ratio::zero(), |s: Ratio<i64>, e| s + e.2) == Ratio::one());
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    fn v() -> Vocab {
        Vocab::new(["A", "B", "C", "D"]).unwrap()
    }

    #[test]
    fn single_missing_token_is_a_point_mass() {
        let v = v();
        let ids = |s: &str| s.split(' ').map(|t| v.id(t).unwrap()).collect::<Vec<_>>();
        let x0 = CleanSequence::unconditioned(&ids("A B C"), &v);
        let xt = ids("<s> A C </s>");
        let post = exact_posterior::<BigInt>(&x0, &xt).unwrap();
        // visible: <stp> <s> A C </s>; after A is slot 2
        assert_eq!(post, vec![(2, v.id("B").unwrap(), Ratio::one())]);
        assert!(exact_posterior::<BigInt>(&x0, &ids("<s> A B C </s>")).unwrap().is_empty());
        assert!(exact_posterior::<BigInt>(&x0, &ids("<s> C A </s>")).is_err());
        let rep = CleanSequence::unconditioned(&ids("A A"), &v);
        assert!(exact_posterior::<BigInt>(&rep, &ids("<s> </s>")).is_err());
    }

    #[test]
    fn oversized_sweep_refused() {
        assert!(matches!(sweep(7, 8, |_| {}), Err(Error::Config(_))));
    }
}
