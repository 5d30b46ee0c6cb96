//! Run directories: manifest, metric stream and checkpoint lookup.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::Result;
use ilm::corpus::Vocab;
use serde::{Deserialize, Serialize};

use crate::config::Settings;

pub const MANIFEST_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const STATE_FILE: &str = "state.ckpt";
pub const MODEL_FILE: &str = "model.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: Settings,
    pub task: String,
    pub data_dir: PathBuf,
    /// Hash of the training records, from their manifest.
    pub corpus_sha256: String,
    pub seed: u64,
    pub max_seq_len: usize,
    /// MDM solution-region length used in training.
    pub mdm_region: usize,
    /// Completed optimizer steps in the latest checkpoint.
    pub step: u64,
    /// Paths relative to the run directory.
    pub checkpoints: Vec<String>,
    pub reports: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        let raw = fs::read_to_string(&p).map_err(|e| ilm::Error::io(&p, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    /// The manifest of the run a checkpoint belongs to, if any.
    pub fn for_checkpoint(ckpt: &Path) -> Option<Self> {
        let dir = ckpt.parent()?;
        dir.join(MANIFEST_FILE).exists().then(|| Self::read(dir).ok()).flatten()
    }
}

/// Vocabulary for a checkpoint: `--vocab` if given, else the copy in its run directory.
pub fn vocab_for(ckpt: &Path, explicit: Option<&Path>) -> Result<Vocab> {
    let p = match explicit {
        Some(p) => p.to_path_buf(),
        None => ckpt.parent().unwrap_or(Path::new(".")).join(crate::data::VOCAB_FILE),
    };
    if !p.exists() {
        return crate::usage(format!("no vocabulary at {}; pass --vocab", p.display()));
    }
    Ok(Vocab::load(&p)?)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| ilm::Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ilm::Error::io(path, e))?;
    Ok(())
}

/// Line-delimited JSON records.
pub struct MetricStream {
    file: File,
}

impl MetricStream {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| ilm::Error::io(path, e))?;
        Ok(MetricStream { file })
    }

    /// Reopens a stream, dropping records after `step` (they will be redone).
    pub fn resume(path: &Path, step: u64) -> Result<Self> {
        let mut kept = Vec::new();
        if path.exists() {
            let f = File::open(path).map_err(|e| ilm::Error::io(path, e))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| ilm::Error::io(path, e))?;
                let v: serde_json::Value = serde_json::from_str(&line)?;
                if v.get("step").and_then(|s| s.as_u64()).is_some_and(|s| s <= step) {
                    kept.push(line);
                }
            }
        }
        let mut body = kept.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        fs::write(path, body).map_err(|e| ilm::Error::io(path, e))?;
        let file = OpenOptions::new().append(true).open(path).map_err(|e| ilm::Error::io(path, e))?;
        Ok(MetricStream { file })
    }

    pub fn record(&mut self, value: &serde_json::Value) -> Result<()> {
        writeln!(self.file, "{value}")?;
        Ok(())
    }
}
