//! Run manifests: every artifact-producing command writes a manifest next
//! to its outputs capturing the tool version, subcommand, resolved
//! configuration, seed and input fingerprints, so any artifact can be
//! regenerated exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub subcommand: String,
    pub seed: u64,
    /// Fully resolved configuration (file values merged with flag
    /// overrides).
    pub config: serde_json::Value,
    /// Input path -> sha256 hex digest of the file contents.
    pub inputs: BTreeMap<String, String>,
    /// Paths of the artifacts this run produced.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(subcommand: impl Into<String>, seed: u64, config: serde_json::Value) -> Self {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.into(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Records an input file by hashing its current contents.
    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs
            .insert(path.display().to_string(), hex_sha256(&bytes));
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().display().to_string());
    }

    /// Writes `<artifact>.manifest.json` next to the given artifact.
    pub fn write_beside(&self, artifact: impl AsRef<Path>) -> Result<()> {
        let artifact = artifact.as_ref();
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path = artifact.with_file_name(name);
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
