//! Run manifests: what a command read, wrote and measured.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::storage::write_json;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    /// Input path to SHA-256 hex digest.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub metrics: BTreeMap<String, serde_json::Value>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub version: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            config: serde_json::Value::Null,
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: "running".to_string(),
            ..Default::default()
        }
    }

    /// Records the digest of an input file; directories are hashed file by file.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| Error::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            for p in entries {
                self.input(&p)?;
            }
            return Ok(());
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let digest = Sha256::digest(&bytes);
        let hex = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.insert(path.display().to_string(), hex);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn metric(&mut self, name: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.metrics.insert(name.to_string(), v);
    }

    pub fn timing(&mut self, stage: &str, seconds: f64) {
        self.timings.insert(stage.to_string(), seconds);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        write_json(path, self)
    }
}

/// `<stem>.manifest.json` next to `output`.
pub fn manifest_beside(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    output.with_file_name(format!("{stem}.manifest.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashes_and_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.txt");
        std::fs::write(&f, b"abc").unwrap();
        let mut m = RunManifest::new("test", vec!["x".into()]);
        m.input(&f).unwrap();
        assert_eq!(
            m.inputs[&f.display().to_string()],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        m.metric("value", 0.5);
        let out = dir.path().join("sub/m.json");
        m.write(&out).unwrap();
        let back: RunManifest = crate::storage::read_json(&out).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest_beside(Path::new("d/r.png")), Path::new("d/r.manifest.json"));
    }
}
