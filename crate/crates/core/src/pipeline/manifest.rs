use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written next to every stage's artifacts. `config` is the resolved
/// configuration the stage ran with, so the directory alone can re-derive it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Input label → sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output file name → sha256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of the compact JSON encoding; field order is fixed by the struct.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

/// Hashes every regular file of `dir` (non-recursive), skipping the manifest.
pub fn hash_dir(dir: &Path, prefix: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if !path.is_file() || name == MANIFEST_FILE {
            continue;
        }
        out.insert(format!("{prefix}{name}"), hash_file(&path)?);
    }
    Ok(out)
}

impl Manifest {
    pub fn new<T: Serialize>(stage: &str, seed: u64, config: &T) -> Result<Self> {
        Ok(Manifest {
            stage: stage.to_string(),
            config_hash: config_hash(config)?,
            seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = Self::path(dir);
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Reads the manifest an upstream `stage` left in `dir`, failing with a
    /// stage-order error when it is absent.
    pub fn require(dir: &Path, stage: &'static str) -> Result<Self> {
        let path = Self::path(dir);
        if !path.exists() {
            return Err(Error::StageOrder { stage, path });
        }
        let m = Self::read(dir)?;
        if m.stage != stage {
            return Err(Error::Invalid(format!(
                "{} was written by `{}`, expected `{stage}`",
                path.display(),
                m.stage
            )));
        }
        Ok(m)
    }

    /// Compares the recorded config hash with `expected` and re-hashes the
    /// recorded outputs. Mismatches become warnings, or an error when `strict`.
    pub fn check_fresh(
        &self,
        dir: &Path,
        expected_hash: &str,
        strict: bool,
    ) -> Result<Vec<String>> {
        let mut problems = Vec::new();
        if self.config_hash != expected_hash {
            problems.push(format!(
                "`{}` artifacts were built from a different configuration (hash {} vs {})",
                self.stage,
                short(&self.config_hash),
                short(expected_hash)
            ));
        }
        for (name, hash) in &self.outputs {
            let path = dir.join(name);
            match hash_file(&path) {
                Ok(h) if &h == hash => {}
                Ok(_) => problems.push(format!(
                    "{} changed after `{}` wrote it",
                    path.display(),
                    self.stage
                )),
                Err(_) => problems.push(format!("{} is missing", path.display())),
            }
        }
        if strict && !problems.is_empty() {
            return Err(Error::Stale {
                path: Self::path(dir),
                message: problems.join("; "),
            });
        }
        Ok(problems)
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
