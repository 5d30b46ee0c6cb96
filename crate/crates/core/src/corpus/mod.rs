//! Vocabulary, corpus ingestion, and the drop-token noising pipeline.

mod batch;
mod load;
mod noise;
mod vocab;

pub use batch::{batch, InsertionTargets, PaddedBatch};
pub use load::{load_corpus, parse_line, CorpusFormat};
pub use noise::{build_noised_example, reinsert, sample_drop_mask, CleanSequence, DropMask, NoisedExample, SlotTarget};
pub use vocab::{Vocab, BOS, EOS, MASK, PAD, SENTINELS, STP};
