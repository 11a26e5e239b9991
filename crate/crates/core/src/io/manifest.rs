use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::store::write_json;
use crate::error::Result;

/// Provenance record written by every command as `manifest_<command>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// SHA-256 of the canonical JSON of the effective configuration.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub git_describe: String,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn file_name(command: &str) -> String {
        format!("manifest_{command}.json")
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(Self::file_name(&self.command)), self)
    }
}

/// Hex SHA-256 of `value` serialised as compact JSON. Struct fields keep
/// declaration order and maps are ordered, so equal values hash equally.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `git describe --always --dirty` of the working directory, or `unknown`
/// outside a repository.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = config_hash(&serde_json::json!({"seed": 1, "lr": 3e-4})).unwrap();
        let b = config_hash(&serde_json::json!({"seed": 1, "lr": 3e-4})).unwrap();
        let c = config_hash(&serde_json::json!({"seed": 2, "lr": 3e-4})).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
        // Oracle: SHA-256 of the empty JSON object.
        assert_eq!(
            config_hash(&serde_json::json!({})).unwrap(),
            "44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a"
        );
    }

    #[test]
    fn manifest_is_named_after_its_command() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest {
            command: "split".into(),
            argv: vec!["neurodec".into(), "split".into()],
            config_hash: config_hash(&()).unwrap(),
            seeds: BTreeMap::from([("seed".into(), 7)]),
            inputs: vec![],
            outputs: vec!["splits.json".into()],
            git_describe: git_describe(),
            wall_time_s: 0.0,
        };
        m.write(dir.path()).unwrap();
        let back: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest_split.json")).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(!back.git_describe.is_empty());
    }
}
