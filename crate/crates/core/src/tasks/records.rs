//! Task record files: one serialized example per line plus a JSON sidecar
//! with everything needed to regenerate the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordManifest {
    pub task: String,
    pub split: String,
    pub spec: serde_json::Value,
    pub seed: u64,
    pub count: usize,
    pub sha256: String,
}

pub fn manifest_path(records: &Path) -> PathBuf {
    let mut p = records.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

fn body(lines: &[String]) -> String {
    let mut s = lines.join("\n");
    s.push('\n');
    s
}

pub fn write_records(path: &Path, lines: &[String], mut manifest: RecordManifest) -> Result<RecordManifest> {
    let text = body(lines);
    manifest.count = lines.len();
    manifest.sha256 = hex::encode(Sha256::digest(text.as_bytes()));
    fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    let mp = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(&mp, json).map_err(|e| Error::io(&mp, e))?;
    Ok(manifest)
}

/// Reads the lines back; if a sidecar exists its hash must match.
pub fn read_records(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mp = manifest_path(path);
    if mp.exists() {
        let raw = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let m: RecordManifest =
            serde_json::from_str(&raw).map_err(|e| Error::Parse { line: e.line(), offset: e.column(), message: e.to_string() })?;
        let got = hex::encode(Sha256::digest(text.as_bytes()));
        if got != m.sha256 {
            return Err(Error::invalid(format!("{} does not match its manifest hash", path.display())));
        }
    }
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_owned).collect())
}
