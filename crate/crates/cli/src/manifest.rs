//! Run manifests: config snapshot, seed, artifact hashes, wall-clock,
//! and crate versions. Reruns with equal inputs produce equal artifact
//! hashes, which is what the determinism checks compare.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::CliError;

#[derive(Serialize, Deserialize)]
pub struct ArtifactHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<ArtifactHash>,
    pub wall_ms: u128,
}

pub struct ManifestBuilder {
    command: String,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Hash every output and write `manifest.json` into `dir`.
    pub fn write(self, dir: &Path) -> Result<(), CliError> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for path in &self.outputs {
            outputs.push(ArtifactHash {
                path: path
                    .strip_prefix(dir)
                    .unwrap_or(path)
                    .display()
                    .to_string(),
                sha256: sha256_file(path)?,
            });
        }
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs,
            wall_ms: self.started.elapsed().as_millis(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Data(format!("manifest encoding: {e}")))?;
        std::fs::write(dir.join("manifest.json"), text)
            .map_err(|e| CliError::Data(format!("manifest write: {e}")))?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot hash {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher)
        .map_err(|e| CliError::Data(format!("cannot hash {}: {e}", path.display())))?;
    Ok(format!("{:x}", hasher.finalize()))
}
