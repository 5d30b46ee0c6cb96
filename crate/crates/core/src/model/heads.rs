//! Output heads and the public scoring operations built on them.

use super::backbone::{backbone_forward, Hidden};
use super::weights::{InsertionHead, ModelWeights};
use super::Variant;
use crate::corpus::PaddedBatch;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{gelu, gelu_grad, linear, linear_backward, log_sum_exp};

/// Insertion scores for one visible sequence.
///
/// Row `k` scores inserting after visible position `k`. Rows outside the
/// slot range are `-inf` and unset in `slot_mask`.
#[derive(Clone, Debug, PartialEq)]
pub struct InsertionLogits {
    pub n_positions: usize,
    pub vocab: usize,
    pub scores: Vec<f64>,
    pub slot_mask: Vec<bool>,
}

impl InsertionLogits {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.scores[k * self.vocab..(k + 1) * self.vocab]
    }

    pub fn n_slots(&self) -> usize {
        self.slot_mask.iter().filter(|&&m| m).count()
    }

    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.slot_mask.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| k)
    }

    /// Builds logits from a dense table, masking rows outside `slot_mask`.
    pub fn from_table(vocab: usize, mut scores: Vec<f64>, slot_mask: Vec<bool>) -> Self {
        let n_positions = slot_mask.len();
        assert_eq!(scores.len(), n_positions * vocab, "table shape");
        for (k, &m) in slot_mask.iter().enumerate() {
            if !m {
                scores[k * vocab..(k + 1) * vocab].fill(f64::NEG_INFINITY);
            }
        }
        InsertionLogits { n_positions, vocab, scores, slot_mask }
    }
}

/// Per-position vocabulary logits for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionLogits {
    pub n_positions: usize,
    pub vocab: usize,
    pub scores: Vec<f64>,
}

impl PositionLogits {
    pub fn row(&self, p: usize) -> &[f64] {
        &self.scores[p * self.vocab..(p + 1) * self.vocab]
    }
}

/// Slot mask for a visible sequence of length `len` whose generation region
/// starts at `bos_index`: slots `bos_index ..= len - 2`.
pub fn slot_mask(len: usize, bos_index: usize) -> Vec<bool> {
    (0..len).map(|k| k >= bos_index && k + 1 < len).collect()
}

pub struct InsertionHeadOut<T> {
    pub rows: usize,
    pub logits: Vec<T>,
    input: Vec<T>,
    pre: Vec<T>,
    act: Vec<T>,
}

pub fn insertion_head_forward<T: Scalar>(h: &InsertionHead<T>, input: Vec<T>, rows: usize) -> InsertionHeadOut<T> {
    let pre = linear(&input, rows, &h.w1, Some(&h.b1));
    let act: Vec<T> = pre.iter().map(|&x| gelu(x)).collect();
    let logits = linear(&act, rows, &h.w2, Some(&h.b2));
    InsertionHeadOut { rows, logits, input, pre, act }
}

/// Returns the gradient with respect to the head input rows.
pub fn insertion_head_backward<T: Scalar>(
    h: &InsertionHead<T>,
    out: &InsertionHeadOut<T>,
    dlogits: &[T],
    g: &mut InsertionHead<T>,
) -> Vec<T> {
    let mut dact = linear_backward(&out.act, dlogits, out.rows, &h.w2, &mut g.w2, Some(&mut g.b2));
    for (da, &p) in dact.iter_mut().zip(&out.pre) {
        *da *= gelu_grad(p);
    }
    linear_backward(&out.input, &dact, out.rows, &h.w1, &mut g.w1, Some(&mut g.b1))
}

fn require_stp(visible: &PaddedBatch, stp: u32) -> Result<()> {
    for i in 0..visible.batch_size() {
        if visible.row(i).first() != Some(&stp) {
            return Err(Error::invalid(format!("visible row {i} does not begin with <stp>")));
        }
    }
    Ok(())
}

/// Gathers hidden rows for valid slots of every batch row.
pub(crate) fn gather_slots<T: Scalar>(hidden: &Hidden<T>, visible: &PaddedBatch) -> (Vec<T>, Vec<(usize, usize)>) {
    let mut rows = Vec::new();
    let mut index = Vec::new();
    for i in 0..visible.batch_size() {
        let len = visible.lengths[i];
        for k in visible.bos_index[i]..len.saturating_sub(1) {
            rows.extend_from_slice(hidden.at(i, k));
            index.push((i, k));
        }
    }
    (rows, index)
}

/// Insertion logits `s(k, v | x)` for every batch row.
///
/// Rows must begin with the `<stp>` id (`stp`).
pub fn insertion_logits<T: Scalar>(w: &ModelWeights<T>, visible: &PaddedBatch, stp: u32) -> Result<Vec<InsertionLogits>> {
    w.expect_variant(&[Variant::Ilm, Variant::It])?;
    require_stp(visible, stp)?;
    let head = w.insertion.as_ref().expect("insertion variants carry the head");
    let hidden = backbone_forward(w, visible, None)?;
    let (rows, index) = gather_slots(&hidden, visible);
    let out = insertion_head_forward(head, rows, index.len());
    let v = w.config.vocab_size;
    let mut result: Vec<InsertionLogits> = (0..visible.batch_size())
        .map(|i| {
            let len = visible.lengths[i];
            InsertionLogits {
                n_positions: len,
                vocab: v,
                scores: vec![f64::NEG_INFINITY; len * v],
                slot_mask: slot_mask(len, visible.bos_index[i]),
            }
        })
        .collect();
    for (r, &(i, k)) in index.iter().enumerate() {
        for (dst, src) in result[i].scores[k * v..(k + 1) * v].iter_mut().zip(&out.logits[r * v..(r + 1) * v]) {
            *dst = src.f64();
        }
    }
    Ok(result)
}

/// Normalized joint distribution over (slot, token); invalid rows are zero.
pub fn joint_insertion_distribution(logits: &InsertionLogits) -> Result<Vec<f64>> {
    if logits.n_slots() == 0 {
        return Err(Error::invalid("no valid insertion slots"));
    }
    let lse = log_sum_exp(&logits.scores);
    if !lse.is_finite() {
        return Err(Error::NonFinite("insertion log-normalizer".into()));
    }
    Ok(logits.scores.iter().map(|&s| (s - lse).exp()).collect())
}

/// Stop-head score (pre-sigmoid) from a `<stp>` hidden state.
pub fn stop_score<T: Scalar>(w: &ModelWeights<T>, h: &[T]) -> T {
    let head = w.stop.as_ref().expect("ilm carries the stop head");
    h.iter().zip(&head.w.data).fold(head.b.data[0], |a, (&x, &y)| a + x * y)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Probability that each visible sequence is complete.
pub fn stop_probability<T: Scalar>(w: &ModelWeights<T>, visible: &PaddedBatch, stp: u32) -> Result<Vec<f64>> {
    w.expect_variant(&[Variant::Ilm])?;
    require_stp(visible, stp)?;
    let hidden = backbone_forward(w, visible, None)?;
    Ok((0..visible.batch_size()).map(|i| sigmoid(stop_score(w, hidden.at(i, 0)).f64())).collect())
}

/// Insertion logits and, for ILM, the stop probability of one visible
/// sequence from a single forward pass.
pub fn score_visible<T: Scalar>(w: &ModelWeights<T>, visible: &[u32], bos_index: usize) -> Result<(InsertionLogits, Option<f64>)> {
    w.expect_variant(&[Variant::Ilm, Variant::It])?;
    let batch = PaddedBatch::single(visible, bos_index);
    let hidden = backbone_forward(w, &batch, None)?;
    let (rows, index) = gather_slots(&hidden, &batch);
    let head = w.insertion.as_ref().expect("insertion variants carry the head");
    let out = insertion_head_forward(head, rows, index.len());
    let v = w.config.vocab_size;
    let mut scores = vec![f64::NEG_INFINITY; visible.len() * v];
    for (r, &(_, k)) in index.iter().enumerate() {
        for (dst, src) in scores[k * v..(k + 1) * v].iter_mut().zip(&out.logits[r * v..(r + 1) * v]) {
            *dst = src.f64();
        }
    }
    let logits = InsertionLogits { n_positions: visible.len(), vocab: v, scores, slot_mask: slot_mask(visible.len(), bos_index) };
    let stop = w.stop.is_some().then(|| sigmoid(stop_score(w, hidden.at(0, 0)).f64()));
    Ok((logits, stop))
}

/// Per-position vocabulary logits for ARM and MDM models.
pub fn token_logits<T: Scalar>(w: &ModelWeights<T>, ids: &PaddedBatch, time: Option<&[f64]>) -> Result<Vec<PositionLogits>> {
    w.expect_variant(&[Variant::Arm, Variant::Mdm])?;
    let head = w.token.as_ref().expect("arm and mdm carry the token head");
    let hidden = backbone_forward(w, ids, time)?;
    let n = hidden.packed.n_positions();
    let logits = linear(&hidden.data, n, &head.w, Some(&head.b));
    let v = w.config.vocab_size;
    Ok(hidden
        .packed
        .segments
        .iter()
        .map(|&(s, len)| PositionLogits {
            n_positions: len,
            vocab: v,
            scores: logits[s * v..(s + len) * v].iter().map(|x| x.f64()).collect(),
        })
        .collect())
}
