//! The drop-token noising process and the target insertion distribution.
//!
//! A clean sequence is `prompt ++ [<s>] ++ content ++ [</s>]`. Only content
//! tokens can be dropped. The noised view prepends `<stp>` to the surviving
//! tokens, and every dropped token is counted against the slot of the last
//! surviving token before it. Slot `k` therefore means "insert right after
//! visible token `k`"; valid slots run from the `<s>` index to the
//! second-to-last visible index.

use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Vocab;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CleanSequence {
    pub ids: Vec<u32>,
    /// Number of leading prompt tokens; `ids[condition_len]` is `<s>`.
    pub condition_len: usize,
}

impl CleanSequence {
    pub fn unconditioned(content: &[u32], vocab: &Vocab) -> Self {
        Self::conditioned(&[], content, vocab)
    }

    pub fn conditioned(prompt: &[u32], content: &[u32], vocab: &Vocab) -> Self {
        let mut ids = Vec::with_capacity(prompt.len() + content.len() + 2);
        ids.extend_from_slice(prompt);
        ids.push(vocab.bos);
        ids.extend_from_slice(content);
        ids.push(vocab.eos);
        CleanSequence { ids, condition_len: prompt.len() }
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if self.ids.len() < self.condition_len + 2 {
            return Err(Error::invalid("sequence shorter than prompt + <s> + </s>"));
        }
        if self.ids[self.condition_len] != vocab.bos {
            return Err(Error::invalid("first token after the prompt must be <s>"));
        }
        if *self.ids.last().unwrap() != vocab.eos {
            return Err(Error::invalid("last token must be </s>"));
        }
        if let Some(&bad) = self.ids.iter().find(|&&i| i as usize >= vocab.len()) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary")));
        }
        Ok(())
    }

    /// Positions of `ids` that noising may remove.
    pub fn droppable(&self) -> Range<usize> {
        self.condition_len + 1..self.ids.len() - 1
    }

    pub fn prompt(&self) -> &[u32] {
        &self.ids[..self.condition_len]
    }

    pub fn content(&self) -> &[u32] {
        &self.ids[self.droppable()]
    }
}

/// Which droppable positions are removed.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DropMask {
    /// One bit per droppable position, in sequence order.
    pub bits: Vec<bool>,
    pub n: usize,
}

impl DropMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        let n = bits.iter().filter(|&&b| b).count();
        DropMask { bits, n }
    }

    pub fn none(len: usize) -> Self {
        DropMask { bits: vec![false; len], n: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotTarget {
    pub slot: usize,
    pub token: u32,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoisedExample {
    /// `<stp>` followed by the surviving tokens.
    pub visible: Vec<u32>,
    /// Index of `<s>` in `visible`: the first valid slot.
    pub bos_index: usize,
    /// Sparse counts, sorted by `(slot, token)`.
    pub slot_targets: Vec<SlotTarget>,
    pub n_dropped: usize,
    pub stop_label: bool,
}

impl NoisedExample {
    pub fn slots(&self) -> Range<usize> {
        self.bos_index..self.visible.len() - 1
    }

    pub fn n_slots(&self) -> usize {
        self.visible.len() - 1 - self.bos_index
    }

    /// `d(k, v) = count / n_dropped`; empty for stop examples.
    pub fn target_distribution(&self) -> Vec<(usize, u32, f64)> {
        let n = self.n_dropped as f64;
        self.slot_targets.iter().map(|t| (t.slot, t.token, t.count as f64 / n)).collect()
    }
}

/// Draws `n` uniformly from `{0, ..., L}` and then a uniform size-`n` subset of
/// the droppable positions.
pub fn sample_drop_mask<R: Rng + ?Sized>(x: &CleanSequence, rng: &mut R) -> Result<DropMask> {
    let len = x.droppable().len();
    if len == 0 {
        return Err(Error::invalid("sequence has no droppable tokens"));
    }
    let n = rng.random_range(0..=len);
    let mut bits = vec![false; len];
    for i in index::sample(rng, len, n) {
        bits[i] = true;
    }
    Ok(DropMask { bits, n })
}

pub fn build_noised_example(x: &CleanSequence, b: &DropMask, vocab: &Vocab) -> NoisedExample {
    let drop = x.droppable();
    assert_eq!(b.bits.len(), drop.len(), "drop mask does not match the droppable region");
    let mut visible = Vec::with_capacity(x.ids.len() + 1 - b.n);
    visible.push(vocab.stp);
    let mut counts: Vec<SlotTarget> = Vec::new();
    for (pos, &tok) in x.ids.iter().enumerate() {
        let dropped = drop.contains(&pos) && b.bits[pos - drop.start];
        if !dropped {
            visible.push(tok);
            continue;
        }
        // the anchor is the most recent survivor; `<s>` always survives
        let slot = visible.len() - 1;
        match counts.iter_mut().find(|t| t.slot == slot && t.token == tok) {
            Some(t) => t.count += 1,
            None => counts.push(SlotTarget { slot, token: tok, count: 1 }),
        }
    }
    counts.sort();
    NoisedExample {
        visible,
        bos_index: x.condition_len + 1,
        slot_targets: counts,
        n_dropped: b.n,
        stop_label: b.n == 0,
    }
}

/// Reinserts dropped tokens slot by slot, placing each slot's tokens in the
/// order given by `order_in_slot`.
pub fn reinsert(ex: &NoisedExample, mut order_in_slot: impl FnMut(usize) -> Vec<u32>) -> Vec<u32> {
    let mut out = Vec::new();
    for (k, &tok) in ex.visible.iter().enumerate().skip(1) {
        out.push(tok);
        if ex.slots().contains(&k) {
            out.extend(order_in_slot(k));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_for;
    use proptest::prelude::*;

    fn vocab() -> Vocab {
        Vocab::new(["A", "B", "C", "D", "E"]).unwrap()
    }

    fn seq(v: &Vocab, toks: &str) -> CleanSequence {
        let ids: Vec<u32> = toks.split_whitespace().map(|t| v.id(t).unwrap()).collect();
        CleanSequence::unconditioned(&ids, v)
    }

    #[test]
    fn length_one_support_is_two_masks_with_equal_mass() {
        let v = vocab();
        let x = seq(&v, "A");
        let mut rng = rng_for(1, &[]);
        let draws = 20_000;
        let ones = (0..draws).filter(|_| sample_drop_mask(&x, &mut rng).unwrap().n == 1).count();
        let p = ones as f64 / draws as f64;
        assert!((p - 0.5).abs() < 3.0 * (0.25 / draws as f64).sqrt() + 1e-3, "p = {p}");
    }

    #[test]
    fn drop_mask_frequencies_match_uniform_n_then_uniform_subset() {
        // exhaustive enumeration of the 8 masks for L = 3
        let v = vocab();
        let x = seq(&v, "A B C");
        let binom = [1.0, 3.0, 3.0, 1.0];
        let mut counts = [0usize; 8];
        let mut rng = rng_for(2, &[]);
        let draws = 100_000;
        for _ in 0..draws {
            let b = sample_drop_mask(&x, &mut rng).unwrap();
            let code = b.bits.iter().enumerate().fold(0, |acc, (i, &bit)| acc | ((bit as usize) << i));
            counts[code] += 1;
        }
        let mut chi2 = 0.0;
        for (code, &c) in counts.iter().enumerate() {
            let n = (code as u32).count_ones() as usize;
            let p = 0.25 / binom[n];
            let expect = p * draws as f64;
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - expect).abs() < 3.0 * sigma, "mask {code:03b}: {c} vs {expect}");
            chi2 += (c as f64 - expect).powi(2) / expect;
        }
        // chi-squared, 7 degrees of freedom, 99.9th percentile
        assert!(chi2 < 24.32, "chi2 = {chi2}");
    }

    #[test]
    fn full_drop_leaves_sentinels() {
        let v = vocab();
        let x = seq(&v, "A B C D");
        let b = DropMask::from_bits(vec![true; 4]);
        let ex = build_noised_example(&x, &b, &v);
        assert_eq!(ex.visible, vec![v.stp, v.bos, v.eos]);
        assert_eq!(ex.n_slots(), 1);
        assert_eq!(ex.slot_targets.iter().map(|t| t.count).sum::<u32>(), 4);
        assert!(ex.slot_targets.iter().all(|t| t.slot == 1));
    }

    #[test]
    fn repeated_tokens_are_counted_in_their_slot() {
        let v = vocab();
        let (a, b_, c) = (v.id("A").unwrap(), v.id("B").unwrap(), v.id("C").unwrap());
        let x = seq(&v, "A B B C");
        let mask = DropMask::from_bits(vec![false, true, true, false]);
        let ex = build_noised_example(&x, &mask, &v);
        assert_eq!(ex.visible, vec![v.stp, v.bos, a, c, v.eos]);
        assert_eq!(ex.slot_targets, vec![SlotTarget { slot: 2, token: b_, count: 2 }]);
        assert_eq!(ex.target_distribution(), vec![(2, b_, 1.0)]);
        assert!(!ex.stop_label);
    }

    #[test]
    fn no_drop_is_stop_example() {
        let v = vocab();
        let x = seq(&v, "A C");
        let ex = build_noised_example(&x, &DropMask::none(2), &v);
        assert!(ex.slot_targets.is_empty());
        assert!(ex.stop_label);
        let mut want = vec![v.stp];
        want.extend(&x.ids);
        assert_eq!(ex.visible, want);
    }

    #[test]
    fn figure_style_example_only_targets_interior_slots() {
        // x = <s> B A D C E </s> keeping A and C
        let v = vocab();
        let x = seq(&v, "B A D C E");
        let mask = DropMask::from_bits(vec![true, false, true, false, true]);
        let ex = build_noised_example(&x, &mask, &v);
        // visible = <stp> <s> A C </s>; dropped B (slot of <s>), D (slot of A), E (slot of C)
        let slots: Vec<usize> = ex.slot_targets.iter().map(|t| t.slot).collect();
        assert_eq!(slots, vec![1, 2, 3]);
        let total: f64 = ex.target_distribution().iter().map(|t| t.2).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prompt_is_never_dropped() {
        let v = vocab();
        let prompt = [v.id("E").unwrap(), v.id("D").unwrap()];
        let x = CleanSequence::conditioned(&prompt, &[v.id("A").unwrap()], &v);
        x.validate(&v).unwrap();
        let mut rng = rng_for(3, &[]);
        for _ in 0..100 {
            let b = sample_drop_mask(&x, &mut rng).unwrap();
            let ex = build_noised_example(&x, &b, &v);
            assert_eq!(&ex.visible[1..3], &prompt);
            assert_eq!(ex.bos_index, 3);
            assert!(ex.slot_targets.iter().all(|t| t.slot >= 3));
        }
    }

    #[test]
    fn empty_droppable_region_is_an_error() {
        let v = vocab();
        let x = CleanSequence::unconditioned(&[], &v);
        assert!(sample_drop_mask(&x, &mut rng_for(0, &[])).is_err());
    }

    proptest! {
        #[test]
        fn counts_sum_to_popcount_and_reinsertion_restores(
            toks in prop::collection::vec(5u32..10, 1..12),
            seed in any::<u64>(),
        ) {
            let v = vocab();
            let x = CleanSequence::unconditioned(&toks, &v);
            let b = sample_drop_mask(&x, &mut rng_for(seed, &[])).unwrap();
            let ex = build_noised_example(&x, &b, &v);
            let total: u32 = ex.slot_targets.iter().map(|t| t.count).sum();
            prop_assert_eq!(total as usize, b.n);
            prop_assert_eq!(ex.stop_label, b.n == 0);
            for t in &ex.slot_targets {
                prop_assert!(ex.slots().contains(&t.slot));
            }
            // reinsertion in original order recovers x
            let dropped: Vec<(usize, u32)> = {
                let mut out = Vec::new();
                let mut anchor = 0usize;
                let mut vis = 1usize;
                for (pos, &tok) in x.ids.iter().enumerate() {
                    let d = x.droppable().contains(&pos) && b.bits[pos - x.droppable().start];
                    if d { out.push((anchor, tok)); } else { anchor = vis; vis += 1; }
                }
                out
            };
            let rebuilt = reinsert(&ex, |k| dropped.iter().filter(|d| d.0 == k).map(|d| d.1).collect());
            prop_assert_eq!(rebuilt, x.ids.clone());
        }
    }
}
