//! Self-describing JSON snapshots of a model.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grad::Matrix;

/// Parameters, effective weights and W2 of one model at one iteration.
/// Floats are written with round-trip precision, so loading restores every
/// parameter bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub iteration: usize,
    pub method: String,
    pub classes: usize,
    pub params: BTreeMap<String, Matrix<T>>,
    pub weights: Vec<f64>,
    pub w2: f64,
    /// Hex SHA-256 of the training config that produced the snapshot.
    pub config_hash: String,
}

impl<T: Serialize + DeserializeOwned> Checkpoint<T> {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::contract(format!("checkpoint serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::contract(format!("checkpoint parse: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn config_hash<C: Serialize>(value: &C) -> Result<String> {
    let bytes = serde_json::to_vec(value).map_err(|e| Error::contract(format!("config serialization: {e}")))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::contract(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}
