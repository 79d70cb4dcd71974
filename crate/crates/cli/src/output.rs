// SPDX-License-Identifier: Apache-2.0

//! Output directory handling, run records and the config hash.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the canonical JSON form of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("configs serialize");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Serialize)]
struct RunRecord<'a, T> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    config: &'a T,
}

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn csv<S: Serialize>(&self, name: &str, rows: &[S]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn json<S: Serialize + ?Sized>(&self, name: &str, value: &S) -> Result<PathBuf> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Writes `run.json` and returns the config hash.
    pub fn record<T: Serialize>(&self, command: &str, config: &T) -> Result<String> {
        let hash = config_hash(config);
        self.json(
            "run.json",
            &RunRecord {
                command,
                version: env!("CARGO_PKG_VERSION"),
                config_hash: hash.clone(),
                config,
            },
        )?;
        Ok(hash)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"width": 16, "seed": 1}));
        assert_eq!(a, config_hash(&serde_json::json!({"width": 16, "seed": 1})));
        assert_ne!(a, config_hash(&serde_json::json!({"width": 16, "seed": 2})));
        assert_eq!(a.len(), 64);
    }
}
