//! Run manifest written next to every command's artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: Status,
    pub error: Option<String>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    /// Relative to the manifest's directory when possible.
    pub outputs: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of checkpoint files read or written.
    pub checkpoints: BTreeMap<String, String>,
    pub codec_fingerprint: Option<String>,
    pub version: String,
    pub wall_clock_ms: u64,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects manifest fields while a command runs.
pub struct Recorder {
    pub manifest: RunManifest,
    path: PathBuf,
    started: Instant,
    deterministic: bool,
}

impl Recorder {
    pub fn new(command: &str, path: PathBuf, deterministic: bool) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                status: Status::Failed,
                error: None,
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                seeds: BTreeMap::new(),
                checkpoints: BTreeMap::new(),
                codec_fingerprint: None,
                version: env!("CARGO_PKG_VERSION").to_string(),
                wall_clock_ms: 0,
            },
            path,
            started: Instant::now(),
            deterministic,
        }
    }

    pub fn config(&mut self, value: impl Serialize) {
        self.manifest.config = serde_json::to_value(value).expect("configs serialise");
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.manifest.inputs.insert(name.to_string(), path.display().to_string());
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.manifest.seeds.insert(name.to_string(), seed);
    }

    pub fn output(&mut self, path: &Path) {
        let base = self.path.parent().unwrap_or(Path::new(""));
        let shown = path.strip_prefix(base).unwrap_or(path);
        self.manifest.outputs.push(shown.display().to_string());
    }

    pub fn checkpoint(&mut self, name: &str, path: &Path) -> Result<()> {
        self.manifest.checkpoints.insert(name.to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn codec(&mut self, fingerprint: &str) {
        self.manifest.codec_fingerprint = Some(fingerprint.to_string());
    }

    /// Marks the run with `outcome` and writes the manifest.
    pub fn finish(mut self, outcome: &Result<()>) -> Result<()> {
        match outcome {
            Ok(()) => self.manifest.status = Status::Ok,
            Err(e) => {
                self.manifest.status = Status::Failed;
                self.manifest.error = Some(format!("{e:#}"));
            }
        }
        if !self.deterministic {
            self.manifest.wall_clock_ms = self.started.elapsed().as_millis() as u64;
        }
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifests serialise");
        std::fs::write(&self.path, json + "\n").with_context(|| format!("writing {}", self.path.display()))
    }
}
