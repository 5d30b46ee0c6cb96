use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which training objective and decoder family a model belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Insertion language model: joint slot x token softmax plus stop head.
    Ilm,
    /// Left-to-right autoregressive model (causal attention).
    Arm,
    /// Masked diffusion model with a time embedding.
    Mdm,
    /// Insertion Transformer ablation: per-slot softmax, slot-EOS stopping.
    It,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ilm => "ilm",
            Variant::Arm => "arm",
            Variant::Mdm => "mdm",
            Variant::It => "it",
        }
    }

    pub fn is_causal(self) -> bool {
        self == Variant::Arm
    }

    pub fn is_insertion(self) -> bool {
        matches!(self, Variant::Ilm | Variant::It)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ilm" => Ok(Variant::Ilm),
            "arm" | "armo" => Ok(Variant::Arm),
            "mdm" => Ok(Variant::Mdm),
            "it" => Ok(Variant::It),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub rope_base: f64,
    pub variant: Variant,
    /// Number of discretized noise levels for the MDM time embedding.
    #[serde(default = "default_time_bins")]
    pub time_bins: usize,
}

fn default_time_bins() -> usize {
    32
}

impl ModelConfig {
    /// The desk-scale backbone used by the planning experiments.
    pub fn desk(variant: Variant, vocab_size: usize, max_seq_len: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 128,
            d_ff: 256,
            max_seq_len,
            vocab_size,
            rope_base: 10_000.0,
            variant,
            time_bins: default_time_bins(),
        }
    }

    /// A very small backbone for unit tests and gradient checks.
    pub fn tiny(variant: Variant, vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            d_ff: 64,
            max_seq_len: 64,
            vocab_size,
            rope_base: 10_000.0,
            variant,
            time_bins: 8,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 {
            return bad("layer, head and width counts must be positive");
        }
        if self.d_model % self.n_heads != 0 {
            return bad("d_model must be divisible by n_heads");
        }
        if self.head_dim() % 2 != 0 {
            return bad("head dimension must be even for rotary encoding");
        }
        if self.max_seq_len < 2 {
            return bad("max_seq_len must be at least 2");
        }
        if self.vocab_size < 6 {
            return bad("vocab_size must cover the five sentinels plus content");
        }
        if !(self.rope_base > 1.0) {
            return bad("rope_base must exceed 1");
        }
        if self.variant == Variant::Mdm && self.time_bins == 0 {
            return bad("mdm needs at least one time bin");
        }
        Ok(())
    }
}
