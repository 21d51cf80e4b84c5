//! Resumable scans. A checkpoint file holds finished evaluations keyed by a
//! string, together with the SHA-256 of the command configuration; a file
//! written under a different configuration is refused.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

const SCHEMA: &str = "ksat-lab.checkpoint/1";

#[derive(Serialize, Deserialize)]
struct File {
    schema: String,
    config_hash: String,
    entries: BTreeMap<String, Value>,
}

pub fn config_hash(command: &str, config: &Value) -> String {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(config.to_string().as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Checkpoint {
    path: Option<PathBuf>,
    hash: String,
    entries: BTreeMap<String, Value>,
    /// Entries loaded from disk, for the report.
    pub restored: usize,
}

impl Checkpoint {
    /// Without a path every lookup misses and nothing is written.
    pub fn open(path: Option<&Path>, command: &str, config: &Value) -> Result<Checkpoint> {
        let hash = config_hash(command, config);
        let mut entries = BTreeMap::new();
        if let Some(p) = path.filter(|p| p.exists()) {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading checkpoint {}", p.display()))?;
            let file: File = serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", p.display()))?;
            if file.schema != SCHEMA {
                bail!("checkpoint {} has schema {}, expected {SCHEMA}", p.display(), file.schema);
            }
            if file.config_hash != hash {
                bail!("checkpoint {} was written for a different configuration", p.display());
            }
            entries = file.entries;
        }
        let restored = entries.len();
        Ok(Checkpoint { path: path.map(Path::to_path_buf), hash, entries, restored })
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Option<T> {
        self.entries.get(key).and_then(|v| serde_json::from_value(v.clone()).ok())
    }

    /// Records an entry and rewrites the file (via a temporary and a rename).
    pub fn put<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.entries.insert(key.to_string(), serde_json::to_value(value)?);
        let Some(path) = &self.path else {
            return Ok(());
        };
        let file = File { schema: SCHEMA.into(), config_hash: self.hash.clone(), entries: self.entries.clone() };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string(&file)?).with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))?;
        Ok(())
    }
}

/// Key for a float argument; exact under round-trips.
pub fn float_key(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn roundtrip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        let cfg = json!({"k": 5});
        let mut c = Checkpoint::open(Some(&p), "regular-xi", &cfg).unwrap();
        c.put("40", &0.1f64).unwrap();
        let c = Checkpoint::open(Some(&p), "regular-xi", &cfg).unwrap();
        assert_eq!(c.restored, 1);
        assert_eq!(c.get::<f64>("40"), Some(0.1));
        assert!(Checkpoint::open(Some(&p), "regular-xi", &json!({"k": 6})).is_err());
    }
}
