use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::errors::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written alongside every command's outputs. Digests are
/// SHA-256 over exact file bytes; re-running a deterministic command with the
/// recorded seed and workers=1 reproduces every output digest.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: u32,
    pub seed: u64,
    pub workers: usize,
    pub created_unix: u64,
    pub duration_s: f64,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub result: serde_json::Value,
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, workers: usize, config: serde_json::Value) -> Self {
        ManifestBuilder {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                artifact_version: 1,
                seed,
                workers,
                created_unix: 0,
                duration_s: 0.0,
                config,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                result: serde_json::Value::Null,
            },
        }
    }

    pub fn record_input(&mut self, path: &Path) -> CliResult<()> {
        let digest = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> CliResult<()> {
        let digest = sha256_file(path)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.manifest.outputs.insert(name, digest);
        Ok(())
    }

    /// Finalize timestamps, attach the result payload, and write
    /// `manifest.json` into `dir`. Returns the manifest path.
    pub fn write(mut self, dir: &Path, result: serde_json::Value) -> CliResult<PathBuf> {
        self.manifest.result = result;
        self.manifest.created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.manifest.duration_s = self.started.elapsed().as_secs_f64();
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_bytes(&bytes))
}
