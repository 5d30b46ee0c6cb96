use super::{NoisedExample, SlotTarget};
use crate::error::{Error, Result};

/// Supervision carried alongside an insertion batch.
#[derive(Clone, Debug, PartialEq)]
pub struct InsertionTargets {
    pub slot_targets: Vec<SlotTarget>,
    pub n_dropped: usize,
    pub stop_label: bool,
}

/// Right-padded token ids with a validity mask.
///
/// The model never attends to or from positions where `mask` is false.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub pad_to: usize,
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
    /// Start of the generation region (index of `<s>`) per row.
    pub bos_index: Vec<usize>,
    /// Empty for unlabelled batches, else one entry per row.
    pub targets: Vec<InsertionTargets>,
}

impl PaddedBatch {
    pub fn from_sequences(seqs: &[&[u32]], bos_index: &[usize], pad_to: usize, pad_id: u32) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if bos_index.len() != seqs.len() {
            return Err(Error::invalid("bos_index length does not match batch size"));
        }
        let mut ids = Vec::with_capacity(seqs.len() * pad_to);
        let mut mask = Vec::with_capacity(seqs.len() * pad_to);
        for (i, s) in seqs.iter().enumerate() {
            if s.len() > pad_to {
                return Err(Error::invalid(format!("row {i} has length {} > pad_to {pad_to}", s.len())));
            }
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat_n(pad_id, pad_to - s.len()));
            mask.extend(std::iter::repeat_n(true, s.len()));
            mask.extend(std::iter::repeat_n(false, pad_to - s.len()));
        }
        Ok(PaddedBatch {
            pad_to,
            ids,
            mask,
            lengths: seqs.iter().map(|s| s.len()).collect(),
            bos_index: bos_index.to_vec(),
            targets: Vec::new(),
        })
    }

    /// Convenience for a single unpadded row.
    pub fn single(seq: &[u32], bos_index: usize) -> Self {
        Self::from_sequences(&[seq], &[bos_index], seq.len(), 0).expect("single row fits")
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    /// Valid tokens of row `i`.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.ids[i * self.pad_to..i * self.pad_to + self.lengths[i]]
    }
}

/// Pads noised examples into one batch and carries their targets.
pub fn batch(examples: &[NoisedExample], pad_to: usize, pad_id: u32) -> Result<PaddedBatch> {
    let rows: Vec<&[u32]> = examples.iter().map(|e| e.visible.as_slice()).collect();
    let bos: Vec<usize> = examples.iter().map(|e| e.bos_index).collect();
    let mut b = PaddedBatch::from_sequences(&rows, &bos, pad_to, pad_id)?;
    b.targets = examples
        .iter()
        .map(|e| InsertionTargets {
            slot_targets: e.slot_targets.clone(),
            n_dropped: e.n_dropped,
            stop_label: e.stop_label,
        })
        .collect();
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_counts_valid_positions() {
        let b = PaddedBatch::from_sequences(&[&[1, 2, 3]], &[1], 6, 0).unwrap();
        assert_eq!(b.mask.iter().filter(|&&m| m).count(), 3);
        assert_eq!(b.row(0), &[1, 2, 3]);
        assert_eq!(&b.ids[3..], &[0, 0, 0]);
    }

    #[test]
    fn overlong_and_empty_rejected() {
        assert!(PaddedBatch::from_sequences(&[&[1, 2, 3]], &[1], 2, 0).is_err());
        assert!(batch(&[], 4, 0).is_err());
    }
}
