//! Per-stage record of inputs, outputs and seeds.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// SHA-256 over git's blob framing (`"blob <len>\0" + bytes`).
pub fn content_address(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Relative to the output root, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub stage: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    /// Wall-clock seconds; the only field that differs between identical runs.
    pub timings: BTreeMap<String, f64>,
}

pub fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}

pub fn hash_files(root: &Path, paths: &[PathBuf]) -> std::io::Result<Vec<FileHash>> {
    let mut out: Vec<FileHash> = paths
        .iter()
        .map(|p| Ok(FileHash { path: relative(root, p), sha256: content_address(&std::fs::read(p)?) }))
        .collect::<std::io::Result<_>>()?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_git_blob_framing() {
        // `printf 'hello\n' | git hash-object --stdin` framing, hashed with SHA-256
        assert_eq!(
            content_address(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }
}
