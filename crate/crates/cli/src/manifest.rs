//! Run manifests: the fully resolved invocation of a subcommand, written
//! before any other output so that a run can be reproduced from it.

use std::fs;
use std::path::{Path, PathBuf};

use bagnet::Result;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "bagnet";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug)]
pub struct Manifest {
    subcommand: String,
    config: Map<String, Value>,
    seeds: Map<String, Value>,
    inputs: Vec<Value>,
    workers: usize,
}

impl Manifest {
    pub fn new(subcommand: &str, workers: usize) -> Self {
        Manifest { subcommand: subcommand.to_owned(), config: Map::new(), seeds: Map::new(), inputs: Vec::new(), workers }
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.config.insert(key.to_owned(), value.into());
        self
    }

    pub fn seed(&mut self, key: &str, value: u64) -> &mut Self {
        self.seeds.insert(key.to_owned(), value.into());
        self
    }

    /// Record an input file by path and content hash.
    pub fn input(&mut self, role: &str, path: &Path, bytes: &[u8]) -> &mut Self {
        self.inputs.push(json!({
            "role": role,
            "path": path.display().to_string(),
            "bytes": bytes.len(),
            "sha256": sha256_hex(bytes),
        }));
        self
    }

    pub fn to_json(&self) -> Value {
        json!({
            "tool": TOOL,
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "workers": self.workers,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut text = serde_json::to_string_pretty(&self.to_json()).expect("manifest values serialize");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// Manifest location for a command that writes a single file.
pub fn sidecar(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
