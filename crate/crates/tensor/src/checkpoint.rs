//! Flat little-endian f64 parameter file plus a JSON manifest.
//!
//! `<base>.bin` holds the buffers back to back; `<base>.json` maps each
//! parameter name to its shape and byte offset.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub hyperparameters: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub buffers: Vec<Vec<f64>>,
}

fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn checkpoint_paths(base: &Path) -> (PathBuf, PathBuf) {
    (with_suffix(base, "bin"), with_suffix(base, "json"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = with_suffix(path, "tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(base: &Path, params: &[(String, Tensor)], hyperparameters: serde_json::Value) -> Result<()> {
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(params.len());
    for (name, t) in params {
        entries.push(ParamEntry { name: name.clone(), shape: t.shape().to_vec(), offset: bytes.len() as u64 });
        for v in t.data().iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest { schema_version: CHECKPOINT_SCHEMA_VERSION, params: entries, hyperparameters };
    let (bin, json) = checkpoint_paths(base);
    write_atomic(&bin, &bytes)?;
    write_atomic(&json, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(base: &Path) -> Result<Checkpoint> {
    let (bin, json) = checkpoint_paths(base);
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(&json)?)?;
    if manifest.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported schema version {} (expected {CHECKPOINT_SCHEMA_VERSION})",
            manifest.schema_version
        )));
    }
    let bytes = fs::read(&bin)?;
    let mut buffers = Vec::with_capacity(manifest.params.len());
    let mut expected_offset = 0u64;
    for e in &manifest.params {
        if e.offset != expected_offset {
            return Err(TensorError::Checkpoint(format!("{}: offset {} != {expected_offset}", e.name, e.offset)));
        }
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * n;
        if end > bytes.len() {
            return Err(TensorError::Checkpoint(format!(
                "{}: needs bytes {start}..{end} but file has {}",
                e.name,
                bytes.len()
            )));
        }
        buffers.push(
            bytes[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect(),
        );
        expected_offset = end as u64;
    }
    if expected_offset as usize != bytes.len() {
        return Err(TensorError::Checkpoint(format!(
            "parameter file has {} bytes, manifest covers {expected_offset}",
            bytes.len()
        )));
    }
    Ok(Checkpoint { manifest, buffers })
}

impl Checkpoint {
    /// Copies stored buffers into `params`, matching by name and shape.
    pub fn restore(&self, params: &[(String, Tensor)]) -> Result<()> {
        if params.len() != self.manifest.params.len() {
            return Err(TensorError::Checkpoint(format!(
                "model has {} parameters, checkpoint has {}",
                params.len(),
                self.manifest.params.len()
            )));
        }
        for ((name, t), (entry, buf)) in params.iter().zip(self.manifest.params.iter().zip(&self.buffers)) {
            if name != &entry.name || t.shape() != entry.shape.as_slice() {
                return Err(TensorError::Checkpoint(format!(
                    "parameter {name} {:?} does not match stored {} {:?}",
                    t.shape(),
                    entry.name,
                    entry.shape
                )));
            }
            t.data_mut().copy_from_slice(buf);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("net");
        let a = Tensor::param(vec![0.1, -2.5e-300, 7.0, f64::MIN_POSITIVE], &[2, 2]).unwrap();
        let b = Tensor::param(vec![3.25], &[1]).unwrap();
        let params = vec![("a".to_string(), a.clone()), ("b".to_string(), b.clone())];
        save_checkpoint(&base, &params, serde_json::json!({"width": 8})).unwrap();

        let ck = load_checkpoint(&base).unwrap();
        assert_eq!(ck.manifest.params[1].offset, 32);
        assert_eq!(ck.manifest.hyperparameters["width"], 8);
        let a2 = Tensor::param(vec![0.0; 4], &[2, 2]).unwrap();
        let b2 = Tensor::param(vec![0.0], &[1]).unwrap();
        ck.restore(&[("a".into(), a2.clone()), ("b".into(), b2.clone())]).unwrap();
        assert_eq!(a2.to_vec(), a.to_vec());
        assert_eq!(b2.to_vec(), b.to_vec());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("net");
        let a = Tensor::param(vec![1.0; 6], &[6]).unwrap();
        save_checkpoint(&base, &[("a".into(), a)], serde_json::Value::Null).unwrap();
        let (bin, _) = checkpoint_paths(&base);
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_checkpoint(&base), Err(TensorError::Checkpoint(_))));
    }

    #[test]
    fn shape_mismatch_on_restore() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("net");
        save_checkpoint(&base, &[("a".into(), Tensor::param(vec![1.0; 4], &[4]).unwrap())], serde_json::Value::Null)
            .unwrap();
        let ck = load_checkpoint(&base).unwrap();
        assert!(ck.restore(&[("a".into(), Tensor::param(vec![0.0; 4], &[2, 2]).unwrap())]).is_err());
    }
}
