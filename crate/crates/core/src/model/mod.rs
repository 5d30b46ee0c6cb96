//! Transformer backbone, output heads and checkpoints.

mod backbone;
mod checkpoint;
mod config;
mod heads;
mod rope;
mod weights;

pub use backbone::{backbone_backward, backbone_forward, backbone_forward_train, time_bin, BackboneCache, Hidden, Packed};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_as, read_archive, read_manifest, save_checkpoint, write_archive, Archive, Manifest,
    TensorEntry, FORMAT_VERSION, MAGIC,
};
pub use config::{ModelConfig, Variant};
pub(crate) use heads::gather_slots;
pub use heads::{
    insertion_head_backward, insertion_head_forward, insertion_logits, joint_insertion_distribution, score_visible, sigmoid,
    slot_mask, stop_probability, stop_score, token_logits, InsertionHeadOut, InsertionLogits, PositionLogits,
};
pub use rope::Rope;
pub use weights::{InsertionHead, LayerWeights, ModelWeights, StopHead, TokenHead};
