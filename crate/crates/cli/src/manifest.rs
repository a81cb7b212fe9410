//! Run manifest: inputs, config hash, seed and a digest of every artifact.
//! Contains no timestamps, so identical runs produce identical manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input path to digest.
    pub inputs: BTreeMap<String, String>,
    /// Flag overrides on top of the config file.
    pub overrides: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Artifact file name to the entry that produced it.
    pub artifacts: BTreeMap<String, (String, Entry)>,
}

impl Manifest {
    pub fn load_or_new(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST_FILE);
        if path.exists() {
            let text =
                fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok(serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?)
        } else {
            Ok(Manifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                artifacts: BTreeMap::new(),
            })
        }
    }

    /// Records `files` (relative to `dir`) as produced by `entry`.
    pub fn record(&mut self, dir: &Path, files: &[PathBuf], entry: &Entry) -> Result<()> {
        for f in files {
            let digest = file_digest(&dir.join(f))?;
            self.artifacts.insert(
                f.to_string_lossy().replace('\\', "/"),
                (digest, entry.clone()),
            );
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text).context("writing manifest")
    }
}
