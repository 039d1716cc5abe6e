//! Artifact directory with a manifest of file digests.

use crate::error::CliError;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Artifacts {
    dir: PathBuf,
    subcommand: &'static str,
    fingerprint: String,
    files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Artifacts {
    pub fn create(dir: &Path, subcommand: &'static str, fingerprint: String) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            subcommand,
            fingerprint,
            files: BTreeMap::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes a table through `fill`, which receives an in-memory sink.
    pub fn table<F>(&mut self, name: &str, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        fill(&mut buf).map_err(|e| CliError::io(&self.dir.join(name), e))?;
        self.put(name, &buf)
    }

    /// Writes `report` with the fingerprint and version added.
    pub fn report(&mut self, name: &str, mut report: Value) -> Result<Value, CliError> {
        if let Value::Object(map) = &mut report {
            map.insert("config_fingerprint".into(), self.fingerprint.clone().into());
            map.insert("tool_version".into(), VERSION.into());
            map.insert("subcommand".into(), self.subcommand.into());
        }
        let mut text = serde_json::to_vec_pretty(&report).expect("reports are plain JSON");
        text.push(b'\n');
        self.put(name, &text)?;
        Ok(report)
    }

    /// Writes `manifest.json` listing every artifact and its SHA-256.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let manifest = json!({
            "config_fingerprint": self.fingerprint,
            "tool_version": VERSION,
            "subcommand": self.subcommand,
            "files": self.files,
        });
        let path = self.dir.join("manifest.json");
        let mut file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::to_writer_pretty(&mut file, &manifest)
            .map_err(std::io::Error::from)
            .and_then(|_| file.write_all(b"\n"))
            .map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
