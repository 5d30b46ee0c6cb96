use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};

/// Marks an infill blank in a template; not a vocabulary token.
pub const GAP: &str = "<gap>";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfillMode {
    /// Insertions only inside the marked blanks.
    #[default]
    BlanksOnly,
    /// Insertions anywhere after `<s>`; given tokens stay frozen.
    Anywhere,
}

/// A partially generated sequence in insertion order.
///
/// `v[i]` was the `i`-th token added and `u[i]` is its current 1-based rank
/// in the sequence. Sorting `v` by `u` gives the sequence itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InsertionState {
    pub v: Vec<u32>,
    pub u: Vec<usize>,
    pub frozen: Vec<bool>,
    /// Open gaps, indexed by the ordinal of the frozen token they follow.
    /// `None` leaves every slot after `<s>` open.
    pub allowed_gaps: Option<Vec<usize>>,
    /// Rank of `<s>`.
    pub bos_rank: usize,
}

impl InsertionState {
    /// Every token of `tokens` becomes a frozen entry; `tokens[bos_index]` is `<s>`.
    pub fn from_sequence(tokens: &[u32], bos_index: usize) -> Self {
        InsertionState {
            v: tokens.to_vec(),
            u: (1..=tokens.len()).collect(),
            frozen: vec![true; tokens.len()],
            allowed_gaps: None,
            bos_rank: bos_index + 1,
        }
    }

    /// `prompt <s> </s>`: unconstrained generation after an optional prompt.
    pub fn from_prompt(prompt: &[u32], vocab: &Vocab) -> Self {
        let mut seq = prompt.to_vec();
        seq.push(vocab.bos);
        seq.push(vocab.eos);
        Self::from_sequence(&seq, prompt.len())
    }

    /// Parses a template such as `<s> A <gap> C </s>`.
    pub fn from_template(template: &str, vocab: &Vocab, mode: InfillMode) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut gaps = Vec::new();
        for tok in template.split_whitespace() {
            if tok == GAP {
                if tokens.is_empty() {
                    return Err(Error::invalid("a <gap> must follow a template token"));
                }
                gaps.push(tokens.len() - 1);
            } else {
                tokens.push(vocab.id(tok).ok_or_else(|| Error::UnknownToken { token: tok.to_string(), line: 1 })?);
            }
        }
        let bos = tokens.iter().position(|&t| t == vocab.bos).ok_or_else(|| Error::invalid("template has no <s>"))?;
        if tokens.last() != Some(&vocab.eos) || tokens[bos + 1..].contains(&vocab.bos) {
            return Err(Error::invalid("template must have one <s> and end with </s>"));
        }
        if let Some(&g) = gaps.iter().find(|&&g| g < bos) {
            return Err(Error::invalid(format!("gap after template token {g} precedes <s>")));
        }
        let mut s = Self::from_sequence(&tokens, bos);
        if mode == InfillMode::BlanksOnly && !gaps.is_empty() {
            gaps.dedup();
            s.allowed_gaps = Some(gaps);
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Tokens in sequence order.
    pub fn sequence(&self) -> Vec<u32> {
        let mut out = vec![0; self.v.len()];
        for (&tok, &r) in self.v.iter().zip(&self.u) {
            out[r - 1] = tok;
        }
        out
    }

    /// Which entries of [`InsertionState::sequence`] are frozen.
    pub fn frozen_in_order(&self) -> Vec<bool> {
        let mut out = vec![false; self.v.len()];
        for (&f, &r) in self.frozen.iter().zip(&self.u) {
            out[r - 1] = f;
        }
        out
    }

    /// `<stp>` followed by the sequence; visible index `k` holds rank `k`.
    pub fn visible(&self, stp: u32) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.v.len() + 1);
        out.push(stp);
        out.extend(self.sequence());
        out
    }

    /// Open slots over visible indices: from `<s>` up to before the last
    /// token, restricted to the allowed gaps.
    pub fn slot_mask(&self) -> Vec<bool> {
        let n = self.v.len();
        let frozen = self.frozen_in_order();
        let mut mask = vec![false; n + 1];
        let mut ordinal: isize = -1;
        for k in 1..=n {
            if frozen[k - 1] {
                ordinal += 1;
            }
            if k < self.bos_rank || k >= n {
                continue;
            }
            mask[k] = match &self.allowed_gaps {
                None => true,
                Some(g) => g.contains(&(ordinal as usize)),
            };
        }
        mask
    }

    /// Inserts `token` right after rank `k` (visible slot `k`).
    pub fn insert(&mut self, k: usize, token: u32) {
        for r in self.u.iter_mut() {
            if *r > k {
                *r += 1;
            }
        }
        self.v.push(token);
        self.u.push(k + 1);
        self.frozen.push(false);
    }

    /// Checks that the ranks are a permutation of `1..=len`.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.v.len()];
        for &r in &self.u {
            if r == 0 || r > seen.len() || seen[r - 1] {
                return Err(Error::invalid("insertion ranks are not a permutation"));
            }
            seen[r - 1] = true;
        }
        if self.u.len() != self.v.len() || self.frozen.len() != self.v.len() {
            return Err(Error::invalid("insertion state fields differ in length"));
        }
        Ok(())
    }
}
