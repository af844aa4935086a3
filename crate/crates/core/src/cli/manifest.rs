//! Run manifests: enough to rerun a subcommand and check that it reproduces
//! the same bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Invocation;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// The parsed command, with every path made absolute.
    pub invocation: Invocation,
    /// SHA-256 of the resolved settings (all keys, sorted).
    pub config_digest: String,
    /// Resolved settings as `key = value` lines.
    pub settings: String,
    /// Root seed and the derived per-subsystem seeds.
    pub seeds: BTreeMap<String, u64>,
    /// Absolute input path -> SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Artifact path relative to the output directory -> SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Digest of a file, or of a directory as its sorted `(relative path,
/// digest)` listing.
pub fn path_digest(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut h = Sha256::new();
        for (rel, d) in dir_digests(path)? {
            h.update(rel.as_bytes());
            h.update(b"\0");
            h.update(d.as_bytes());
            h.update(b"\n");
        }
        Ok(hex::encode(h.finalize()))
    } else {
        file_digest(path)
    }
}

/// Every regular file under `root`, keyed by `/`-separated relative path.
pub fn dir_digests(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        let dir = root.join(&rel);
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let child = rel.join(entry.file_name());
            let full = root.join(&child);
            if full.is_dir() {
                stack.push(child);
            } else {
                let key = child
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy().into_owned())
                    .collect::<Vec<_>>()
                    .join("/");
                out.insert(key, file_digest(&full)?);
            }
        }
    }
    Ok(out)
}

impl RunManifest {
    pub fn save(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("serializable") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    /// Recomputes every input digest and fails on the first difference.
    pub fn verify_inputs(&self) -> Result<()> {
        for (path, expected) in &self.inputs {
            let found = path_digest(Path::new(path))?;
            if &found != expected {
                return Err(Error::Invalid(format!(
                    "input {path} changed since the run: digest {found}, manifest records {expected}"
                )));
            }
        }
        Ok(())
    }

    /// Recomputes artifact digests under `out_dir`; returns the mismatches as
    /// `(path, recorded, found)` with `found` empty for missing files.
    pub fn compare_artifacts(&self, out_dir: &Path) -> Result<Vec<(String, String, String)>> {
        let mut diffs = Vec::new();
        for (rel, expected) in &self.artifacts {
            let path = out_dir.join(rel);
            let found = if path.exists() {
                file_digest(&path)?
            } else {
                String::new()
            };
            if &found != expected {
                diffs.push((rel.clone(), expected.clone(), found));
            }
        }
        Ok(diffs)
    }
}
