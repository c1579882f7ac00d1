//! Config hashing and input digests embedded in output headers.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_bytes(name: impl Into<String>, bytes: &[u8]) -> Self {
        InputDigest {
            name: name.into(),
            sha256: sha256_hex(bytes),
        }
    }

    /// Digest keyed by file name only, so outputs do not depend on where the
    /// inputs live.
    pub fn of_file(path: &Path, bytes: &[u8]) -> Self {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::of_bytes(name, bytes)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new<C: Serialize>(config: &C, mut inputs: Vec<InputDigest>) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        let canonical = serde_json::to_vec(&config).expect("value serializes");
        inputs.sort_by(|a, b| a.name.cmp(&b.name).then_with(|| a.sha256.cmp(&b.sha256)));
        Provenance {
            config,
            config_hash: sha256_hex(&canonical),
            inputs,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn inputs_are_ordered() {
        let p = Provenance::new(
            &serde_json::json!({"b": 1, "a": 2}),
            vec![InputDigest::of_bytes("z", b"1"), InputDigest::of_bytes("a", b"2")],
        );
        assert_eq!(p.inputs[0].name, "a");
        let q = Provenance::new(&serde_json::json!({"a": 2, "b": 1}), vec![]);
        assert_eq!(p.config_hash, q.config_hash);
    }
}
