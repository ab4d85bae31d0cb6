//! Run manifests: hash-referenced records of what a command read and wrote.
//!
//! A manifest carries no timestamps or host state, so re-running a command on
//! the same inputs must reproduce the same output hashes.

use crate::container::atomic_write;
use crate::error::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

/// A file referenced by content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record for one command invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub working_sample_rate: u32,
    pub inputs: Vec<ArtifactRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separator_origin: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_kind: Option<String>,
    pub config_echo: BTreeMap<String, String>,
    pub outputs: Vec<ArtifactRef>,
}

impl RunManifest {
    pub fn new(command: &str, working_sample_rate: u32) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            working_sample_rate,
            inputs: Vec::new(),
            separator_origin: None,
            prior_kind: None,
            config_echo: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(artifact_ref(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(artifact_ref(path)?);
        Ok(())
    }

    /// (file name, hash) pairs of the outputs, for cross-run comparison.
    pub fn output_digest(&self) -> Vec<(String, String)> {
        let mut pairs: Vec<(String, String)> = self
            .outputs
            .iter()
            .map(|a| {
                let name = Path::new(&a.path)
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| a.path.clone());
                (name, a.sha256.clone())
            })
            .collect();
        pairs.sort();
        pairs
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

fn artifact_ref(path: &Path) -> Result<ArtifactRef> {
    Ok(ArtifactRef {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_bytes(&std::fs::read(path)?))
}
