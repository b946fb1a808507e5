//! Run directories: every written file is hashed into a manifest that also
//! echoes the configuration and the hashes of the inputs.

use crate::config::RunConfig;
use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub config: RunConfig,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

/// Output directory of one command.
pub struct RunDir {
    root: PathBuf,
    command: String,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

impl RunDir {
    pub fn create(root: &Path, command: &str) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), command: command.into(), inputs: Vec::new(), outputs: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Records the hash of an input file.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).with_context(|| format!("reading input {}", path.display()))?;
        self.inputs.push(FileHash { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.retain(|f| f.path != name);
        self.outputs.push(FileHash { path: name.into(), sha256: sha256_hex(bytes) });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `config.toml` and `manifest.json`. Nothing time-dependent goes
    /// into either, so reruns are byte-identical.
    pub fn finish(mut self, cfg: &RunConfig) -> Result<PathBuf> {
        let toml = cfg.to_toml();
        self.write("config.toml", toml.as_bytes())?;
        let manifest = Manifest {
            command: self.command.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: sha256_hex(toml.as_bytes()),
            config: cfg.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.path("manifest.json");
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// Encodes ray lengths as grey levels: near maps to 1, far to 1/255, misses
/// to 0.
pub fn encode_depth(t: Option<f64>, range: [f64; 2]) -> f64 {
    match t {
        None => 0.0,
        Some(t) => (1.0 - (t - range[0]) / (range[1] - range[0])).clamp(1.0 / 255.0, 1.0),
    }
}

/// Inverse of [`encode_depth`] up to quantization.
pub fn decode_depth(v: f64, range: [f64; 2]) -> Option<f64> {
    (v > 0.0).then(|| range[0] + (1.0 - v) * (range[1] - range[0]))
}
