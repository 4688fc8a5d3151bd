//! Run manifests: what ran, with which settings, on which inputs.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<PathBuf>,
    pub started_unix_ms: u64,
    pub wall_clock_ms: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut r = data::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Collects manifest fields while a command runs.
pub struct Recorder {
    command: String,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
    started_unix_ms: u64,
}

impl Recorder {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            config,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.into(), value);
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn outputs(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.outputs.extend(paths);
    }

    /// Hashes the inputs and writes the manifest to `path`.
    pub fn finish(self, path: &Path) -> Result<RunManifest> {
        let mut inputs = Vec::with_capacity(self.inputs.len());
        for p in self.inputs {
            inputs.push(FileHash {
                sha256: sha256_file(&p)?,
                path: p,
            });
        }
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.config,
            seeds: self.seeds,
            inputs,
            outputs: self.outputs,
            started_unix_ms: self.started_unix_ms,
            wall_clock_ms: self.started.elapsed().as_millis() as u64,
        };
        let mut w = data::create(path)?;
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        std::io::Write::write_all(&mut w, b"\n")?;
        std::io::Write::flush(&mut w)?;
        tracing::info!(manifest = %path.display(), wall_clock_ms = manifest.wall_clock_ms, "run complete");
        Ok(manifest)
    }
}
