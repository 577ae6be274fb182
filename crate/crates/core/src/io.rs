//! Artifact headers and JSON checkpoint helpers.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Provenance recorded at the top of every text artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
}

impl ArtifactHeader {
    pub fn new(command: impl Into<String>, seed: u64, config_hash: impl Into<String>) -> Self {
        ArtifactHeader {
            command: command.into(),
            seed,
            config_hash: config_hash.into(),
        }
    }

    /// `#`-prefixed header lines, terminated by a newline.
    pub fn render(&self, kind: &str) -> String {
        format!(
            "# pianorl {kind} v1\n# command: {}\n# seed: {}\n# config: {}\n",
            self.command, self.seed, self.config_hash
        )
    }

    /// Reads the header back from the leading comment lines, if present.
    pub fn parse(text: &str) -> Option<ArtifactHeader> {
        let mut command = None;
        let mut seed = None;
        let mut hash = None;
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let body = line[1..].trim();
            if let Some(v) = body.strip_prefix("command:") {
                command = Some(v.trim().to_string());
            } else if let Some(v) = body.strip_prefix("seed:") {
                seed = v.trim().parse().ok();
            } else if let Some(v) = body.strip_prefix("config:") {
                hash = Some(v.trim().to_string());
            }
        }
        Some(ArtifactHeader::new(command?, seed?, hash?))
    }
}

/// Hex SHA-256 of a config's canonical JSON form, truncated to 16 chars.
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let bytes = serde_json::to_vec(cfg).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    hex::encode(digest)[..16].to_string()
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    version: u32,
    header: ArtifactHeader,
    payload: T,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_json<T: Serialize>(path: &Path, header: &ArtifactHeader, payload: &T) -> Result<()> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        header: header.clone(),
        payload,
    };
    let text = serde_json::to_string(&ck)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<(ArtifactHeader, T)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint<T> = serde_json::from_str(&text)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path.display().to_string(),
            1,
            format!("checkpoint version {} (expected {CHECKPOINT_VERSION})", ck.version),
        ));
    }
    Ok((ck.header, ck.payload))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
