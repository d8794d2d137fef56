//! Versioned JSON artifacts stamped with tool version, config hash and seed.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the canonical JSON encoding (object keys sorted).
pub fn config_hash<T: Serialize + ?Sized>(config: &T) -> Result<String> {
    let canonical = serde_json::to_vec(&serde_json::to_value(config)?)?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new<T: Serialize + ?Sized>(config: &T, seed: u64) -> Result<Self> {
        Ok(Self {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config_hash(config)?,
            seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub kind: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub body: T,
}

impl<T: Serialize> Artifact<T> {
    pub fn new(kind: &str, provenance: Provenance, body: T) -> Self {
        Self {
            kind: kind.to_string(),
            provenance,
            body,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

impl<T: DeserializeOwned> Artifact<T> {
    pub fn read(path: &Path, kind: &str) -> Result<Self> {
        let artifact: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if artifact.kind != kind {
            return Err(Error::Contract(format!(
                "{} holds a {:?} artifact, expected {kind:?}",
                path.display(),
                artifact.kind
            )));
        }
        Ok(artifact)
    }
}
