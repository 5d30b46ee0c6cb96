use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A run report: hash of the configuration, metric values and optional
/// per-example records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub nll_unit: String,
    pub metrics: serde_json::Map<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub examples: Option<Vec<serde_json::Value>>,
}

pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl Report {
    pub fn new<C: Serialize>(config: &C) -> Result<Self> {
        Ok(Report { config_hash: config_hash(config)?, nll_unit: "nats/token".into(), metrics: Default::default(), examples: None })
    }

    pub fn set<V: Serialize>(&mut self, key: &str, value: V) -> Result<()> {
        let v = serde_json::to_value(value).map_err(|e| Error::invalid(e.to_string()))?;
        self.metrics.insert(key.to_string(), v);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}
