//! The record of every setting a command ran with, and its fingerprint.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Hex digits kept from the SHA-256 digest.
const FINGERPRINT_LEN: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub version: String,
    pub settings: serde_json::Value,
}

impl RunConfig {
    pub fn new(command: &str, settings: &impl Serialize) -> anyhow::Result<Self> {
        Ok(Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            settings: serde_json::to_value(settings).context("serializing run settings")?,
        })
    }

    /// Truncated SHA-256 of the canonical JSON (object keys sorted).
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("a JSON value always serializes");
        hex::encode(Sha256::digest(json))[..FINGERPRINT_LEN].to_string()
    }
}

/// Truncated SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes))[..FINGERPRINT_LEN].to_string())
}
