//! Training configuration: command-line flag, then config file, then default.

use std::path::Path;

use anyhow::{Context, Result};
use ilm::model::{ModelConfig, Variant};
use ilm::training::TrainConfig;
use log::info;
use serde::{Deserialize, Serialize};

/// Every tunable of a training run. Also the on-disk TOML format (flat keys);
/// in a config file every key is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    /// `ilm`, `arm`, `armo` (ARM on reversed solutions), `mdm` or `it`.
    pub variant: String,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    /// 0 disables clipping.
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// 0 sizes the context to the longest training sequence plus a margin.
    pub max_seq_len: usize,
    pub time_bins: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let m = ModelConfig::desk(Variant::Ilm, 6, 0);
        Settings {
            variant: "ilm".into(),
            lr: 1e-4,
            batch_size: 64,
            steps: 10_000,
            seed: 0,
            grad_clip: 1.0,
            weight_decay: 0.01,
            checkpoint_every: 1000,
            log_every: 100,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_model: m.d_model,
            d_ff: m.d_ff,
            max_seq_len: 0,
            time_bins: m.time_bins,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partial {
    pub variant: Option<String>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub steps: Option<u64>,
    pub seed: Option<u64>,
    pub grad_clip: Option<f64>,
    pub weight_decay: Option<f64>,
    pub checkpoint_every: Option<u64>,
    pub log_every: Option<u64>,
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub d_model: Option<usize>,
    pub d_ff: Option<usize>,
    pub max_seq_len: Option<usize>,
    pub time_bins: Option<usize>,
}

impl Partial {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| ilm::Error::io(path, e))?;
        toml::from_str(&raw)
            .map_err(|e| ilm::Error::Config(format!("{}: {e}", path.display())))
            .context("reading config file")
    }
}

macro_rules! layer {
    ($flags:expr, $file:expr, $out:expr, $($f:ident),*) => {
        $(
            let (value, source) = match ($flags.$f.clone(), $file.$f.clone()) {
                (Some(v), _) => (v, "flag"),
                (None, Some(v)) => (v, "file"),
                (None, None) => ($out.$f.clone(), "default"),
            };
            info!("config {} = {:?} ({source})", stringify!($f), value);
            $out.$f = value;
        )*
    };
}

/// Flag > file > default; logs where each value came from.
pub fn resolve(flags: &Partial, file: &Partial) -> Settings {
    let mut s = Settings::default();
    layer!(
        flags, file, s, variant, lr, batch_size, steps, seed, grad_clip, weight_decay, checkpoint_every, log_every, n_layers,
        n_heads, d_model, d_ff, max_seq_len, time_bins
    );
    s
}

impl Settings {
    pub fn model_variant(&self) -> Result<Variant> {
        Ok(self.variant.parse()?)
    }

    pub fn reversed(&self) -> bool {
        self.variant == "armo"
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_steps: self.steps,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            seed: self.seed,
            eval_every: self.log_every,
            weight_decay: self.weight_decay,
            checkpoint_every: self.checkpoint_every,
            ..TrainConfig::new(self.model_variant()?)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self, vocab_size: usize, max_seq_len: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            time_bins: self.time_bins,
            ..ModelConfig::desk(self.model_variant()?, vocab_size, max_seq_len)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}
