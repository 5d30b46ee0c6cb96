use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::inference::GAP;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentMode {
    Single,
    Multi,
}

/// A ground-truth content sequence with interior spans blanked out.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfillExample {
    pub gt: Vec<u32>,
    /// `(start, len)` in content coordinates, sorted and separated by at
    /// least one kept token.
    pub spans: Vec<(usize, usize)>,
}

impl InfillExample {
    fn removed(&self, i: usize) -> bool {
        self.spans.iter().any(|&(s, l)| i >= s && i < s + l)
    }

    /// Content with the blanked spans deleted.
    pub fn inp(&self) -> Vec<u32> {
        self.gt.iter().enumerate().filter(|(i, _)| !self.removed(*i)).map(|(_, &t)| t).collect()
    }

    /// Template text `<s> ... <gap> ... </s>` for insertion decoding.
    pub fn template(&self, vocab: &Vocab) -> String {
        let mut out = vec![vocab.token(vocab.bos).to_string()];
        for (i, &t) in self.gt.iter().enumerate() {
            if self.removed(i) {
                if !self.removed(i - 1) {
                    out.push(GAP.to_string());
                }
            } else {
                out.push(vocab.token(t).to_string());
            }
        }
        out.push(vocab.token(vocab.eos).to_string());
        out.join(" ")
    }

    /// Content with each blanked token replaced by `<mask>`, for MDM infilling.
    pub fn masked(&self, vocab: &Vocab) -> Vec<u32> {
        self.gt.iter().enumerate().map(|(i, &t)| if self.removed(i) { vocab.mask } else { t }).collect()
    }

    /// Ground truth rebuilt from the input and the blanked tokens.
    pub fn reassemble(&self, fills: &[Vec<u32>]) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.gt.len());
        let mut next = 0;
        let mut i = 0;
        while i < self.gt.len() {
            if let Some(&(s, l)) = self.spans.iter().find(|&&(s, _)| s == i) {
                out.extend_from_slice(&fills[next]);
                next += 1;
                i = s + l;
            } else {
                out.push(self.gt[i]);
                i += 1;
            }
        }
        out
    }
}

/// One span of length uniform in `[1, L/3]` (single), or 2-3 spans sharing
/// that budget (multi). Spans never touch the first or last token or each
/// other. Returns the examples and how many were too short.
pub fn build_infill_set<R: Rng + ?Sized>(corpus: &[Vec<u32>], mode: SegmentMode, rng: &mut R) -> (Vec<InfillExample>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for gt in corpus {
        match draw_spans(gt.len(), mode, rng) {
            Some(spans) => out.push(InfillExample { gt: gt.clone(), spans }),
            None => skipped += 1,
        }
    }
    (out, skipped)
}

fn draw_spans<R: Rng + ?Sized>(len: usize, mode: SegmentMode, rng: &mut R) -> Option<Vec<(usize, usize)>> {
    let k = match mode {
        SegmentMode::Single => 1,
        SegmentMode::Multi => rng.random_range(2..=3),
    };
    let max_span = (len / 3) / k;
    // k spans of length >= 1, k - 1 separators and the two untouched ends
    if max_span == 0 || len < 3 * k + 1 {
        return None;
    }
    for _ in 0..100 {
        let lens: Vec<usize> = (0..k).map(|_| rng.random_range(1..=max_span)).collect();
        let used: usize = lens.iter().sum::<usize>() + (k - 1);
        if used + 2 > len {
            continue;
        }
        // distribute the free tokens over k + 1 gaps, each end gap >= 1
        let free = len - 2 - used;
        let mut cuts: Vec<usize> = (0..k).map(|_| rng.random_range(0..=free)).collect();
        cuts.sort_unstable();
        let mut spans = Vec::with_capacity(k);
        let mut pos = 1;
        let mut prev = 0;
        for (j, &l) in lens.iter().enumerate() {
            pos += cuts[j] - prev;
            prev = cuts[j];
            spans.push((pos, l));
            pos += l + 1;
        }
        return Some(spans);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_for;

    #[test]
    fn short_examples_skipped() {
        let mut rng = rng_for(0, &[]);
        let (ex, skipped) = build_infill_set(&[vec![5, 6], vec![5, 6, 7, 8, 9, 10]], SegmentMode::Single, &mut rng);
        assert_eq!((ex.len(), skipped), (1, 1));
        assert_eq!(ex[0].spans.len(), 1);
    }
}
