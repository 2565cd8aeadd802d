//! Model store: `store/<run-id>/` with JSON artifacts and a manifest of
//! SHA-256 hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UserError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    /// Relative path to SHA-256 of the file contents.
    pub artifacts: BTreeMap<String, String>,
    /// Free-form per-command notes (fallback clusters, provenance, ...).
    pub notes: BTreeMap<String, serde_json::Value>,
}

pub struct Store {
    root: PathBuf,
    manifest: Manifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| UserError(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| UserError(format!("cannot write {}: {e}", path.display())).into())
}

impl Store {
    pub fn open(store: &Path, run_id: &str) -> Result<Self> {
        let root = store.join(run_id);
        std::fs::create_dir_all(&root)
            .map_err(|e| UserError(format!("cannot create store {}: {e}", root.display())))?;
        let path = root.join(MANIFEST);
        let manifest = if path.exists() {
            let text = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            Manifest {
                run_id: run_id.to_string(),
                ..Default::default()
            }
        };
        Ok(Self { root, manifest })
    }

    pub fn cluster_file(k: usize) -> String {
        format!("cluster_k{k}.json")
    }

    pub fn predictor_file(variant: &str, k: usize, cluster: usize) -> String {
        format!("{variant}/predictor_k{k}_c{cluster}.json")
    }

    pub fn put<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let bytes = to_json(value)?;
        write_file(&self.root.join(rel), &bytes)?;
        self.manifest.artifacts.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn get<T: DeserializeOwned>(&self, rel: &str, hint: &str) -> Result<T> {
        let path = self.root.join(rel);
        let bytes = std::fs::read(&path)
            .map_err(|e| UserError(format!("missing {} ({e}); {hint}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| UserError(format!("corrupt {}: {e}", path.display())).into())
    }

    pub fn note(&mut self, key: impl Into<String>, value: impl Serialize) -> Result<()> {
        self.manifest.notes.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn save(&self) -> Result<()> {
        write_file(&self.root.join(MANIFEST), &to_json(&self.manifest)?)
    }
}
