//! Checkpoint container.
//!
//! Layout: 8-byte magic, `u32` LE format version, `u64` LE manifest length,
//! JSON manifest, then raw little-endian tensor bytes addressed by the
//! manifest's offset table.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelWeights, Variant};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ILMCKPT1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the data section.
    pub offset: usize,
    /// Length in bytes.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub byte_order: String,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Named tensors plus a manifest, as stored on disk.
#[derive(Clone, Debug)]
pub struct Archive<T> {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor<T>>,
    pub extra: serde_json::Value,
}

pub fn write_archive<T: Scalar>(
    path: &Path,
    config: &ModelConfig,
    tensors: &[(String, &Tensor<T>)],
    extra: serde_json::Value,
) -> Result<()> {
    let mut data = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let offset = data.len();
        for &x in &t.data {
            x.write_le(&mut data);
        }
        entries.push(TensorEntry { name: name.clone(), shape: t.shape.clone(), offset, len: data.len() - offset });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        byte_order: "little".into(),
        config: config.clone(),
        tensors: entries,
        extra,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| Error::CheckpointFormat(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    // Write-then-rename so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &out).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn decode<T: Scalar, S: Scalar>(bytes: &[u8]) -> Vec<T> {
    bytes.chunks_exact(S::BYTES).map(|c| T::of(S::read_le(c).f64())).collect()
}

pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::CheckpointTruncated { needed: HEADER_LEN, found: bytes.len() });
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::CheckpointFormat("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: FORMAT_VERSION });
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let data_start = HEADER_LEN.checked_add(mlen).ok_or_else(|| Error::CheckpointFormat("manifest length".into()))?;
    if bytes.len() < data_start {
        return Err(Error::CheckpointTruncated { needed: data_start, found: bytes.len() });
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..data_start])
        .map_err(|e| Error::CheckpointFormat(format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(Error::CheckpointVersion { found: manifest.format_version, expected: FORMAT_VERSION });
    }
    if manifest.byte_order != "little" {
        return Err(Error::CheckpointFormat(format!("unsupported byte order `{}`", manifest.byte_order)));
    }
    Ok((manifest, data_start))
}

pub fn read_archive<T: Scalar>(path: &Path) -> Result<Archive<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (manifest, start) = read_manifest(&bytes)?;
    let elem = match manifest.dtype.as_str() {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::CheckpointFormat(format!("unsupported dtype `{other}`"))),
    };
    let data = &bytes[start..];
    let mut tensors = BTreeMap::new();
    for e in &manifest.tensors {
        let numel: usize = e.shape.iter().product();
        if e.len != numel * elem {
            return Err(Error::CheckpointFormat(format!("tensor `{}` byte length does not match its shape", e.name)));
        }
        let end = e.offset + e.len;
        if data.len() < end {
            return Err(Error::CheckpointTruncated { needed: start + end, found: bytes.len() });
        }
        let raw = &data[e.offset..end];
        let values = if elem == 4 { decode::<T, f32>(raw) } else { decode::<T, f64>(raw) };
        tensors.insert(e.name.clone(), Tensor { shape: e.shape.clone(), data: values });
    }
    Ok(Archive { config: manifest.config, tensors, extra: manifest.extra })
}

impl<T: Scalar> Archive<T> {
    /// Fills `target` from tensors named `prefix + name`, checking shapes.
    pub fn fill(&mut self, prefix: &str, target: &mut ModelWeights<T>) -> Result<()> {
        let mut err = None;
        target.visit_mut(|name, t| {
            if err.is_some() {
                return;
            }
            let key = format!("{prefix}{name}");
            match self.tensors.remove(&key) {
                None => err = Some(Error::CheckpointFormat(format!("missing tensor `{key}`"))),
                Some(src) if src.shape != t.shape => {
                    err = Some(Error::CheckpointShape { name: key, found: src.shape, expected: t.shape.clone() })
                }
                Some(src) => *t = src,
            }
        });
        err.map_or(Ok(()), Err)
    }
}

pub fn save_checkpoint<T: Scalar>(w: &ModelWeights<T>, path: &Path) -> Result<()> {
    let mut named = Vec::new();
    w.visit(|n, t| named.push((n.to_string(), t.clone())));
    let refs: Vec<(String, &Tensor<T>)> = named.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_archive(path, &w.config, &refs, serde_json::Value::Null)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelWeights<T>> {
    let mut archive = read_archive::<T>(path)?;
    archive.config.validate()?;
    let mut w = ModelWeights::<T>::init_shell(archive.config.clone());
    archive.fill("", &mut w)?;
    if let Some(extra) = archive.tensors.keys().find(|k| !k.contains("adam.")) {
        return Err(Error::CheckpointFormat(format!("unexpected tensor `{extra}`")));
    }
    if !w.is_finite() {
        return Err(Error::NonFinite(format!("checkpoint {} holds non-finite weights", path.display())));
    }
    Ok(w)
}

/// Loads a checkpoint and checks that it belongs to one of `allowed`.
pub fn load_checkpoint_as<T: Scalar>(path: &Path, allowed: &[Variant]) -> Result<ModelWeights<T>> {
    let w = load_checkpoint::<T>(path)?;
    w.expect_variant(allowed)?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_for;

    fn random(v: Variant) -> ModelWeights<f32> {
        ModelWeights::init(ModelConfig::tiny(v, 12), &mut rng_for(11, &[])).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let w = random(Variant::Mdm);
        save_checkpoint(&w, &p).unwrap();
        let back: ModelWeights<f32> = load_checkpoint(&p).unwrap();
        assert_eq!(back, w);
        let wide: ModelWeights<f64> = load_checkpoint(&p).unwrap();
        assert_eq!(wide.cast::<f32>(), w);
    }

    #[test]
    fn header_corruption_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&random(Variant::Ilm), &p).unwrap();
        let good = fs::read(&p).unwrap();

        let mut bad = good.clone();
        bad[0] ^= 0xff;
        fs::write(&p, &bad).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::CheckpointFormat(_))));

        let mut bad = good.clone();
        bad[8] = 9;
        fs::write(&p, &bad).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::CheckpointVersion { found: 9, .. })));

        fs::write(&p, &good[..good.len() - 10]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::CheckpointTruncated { .. })));
    }

    #[test]
    fn variant_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("arm.ckpt");
        save_checkpoint(&random(Variant::Arm), &p).unwrap();
        assert!(matches!(load_checkpoint_as::<f32>(&p, &[Variant::Ilm]), Err(Error::VariantMismatch { .. })));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let w = random(Variant::Ilm);
        let mut wrong = w.clone();
        wrong.lnf_g = Tensor::zeros(&[5]);
        let mut named = Vec::new();
        wrong.visit(|n, t| named.push((n.to_string(), t.clone())));
        let refs: Vec<_> = named.iter().map(|(n, t)| (n.clone(), t)).collect();
        write_archive(&p, &w.config, &refs, serde_json::Value::Null).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p), Err(Error::CheckpointShape { .. })));
    }
}
