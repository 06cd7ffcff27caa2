//! Checkpoint persistence: JSON weights plus a JSON descriptor sidecar.
//!
//! serde_json prints f64 with shortest round-trip formatting, so a
//! save/load cycle is bit-exact and retraining with the same seed yields
//! byte-identical checkpoint files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Sidecar metadata identifying what a checkpoint contains.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Descriptor {
    pub architecture: String,
    pub resolution: usize,
    pub classes: usize,
    pub seed: u64,
}

/// Writes a serializable model to `path`.
pub fn save_model<T: Serialize>(model: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_vec(model)?)?;
    Ok(())
}

/// Reads a model back; weights are restored exactly, optimizer state is not.
pub fn load_model<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Hex SHA-256 of a file, for run manifests.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(fs::read(path)?);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
