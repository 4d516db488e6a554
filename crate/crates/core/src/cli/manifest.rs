//! Run manifests: one appended JSONL record per command invocation,
//! capturing the resolved configuration, inputs/outputs, seed and content
//! hashes of the model artifacts used, so any run can be reproduced from
//! its manifest line alone.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE_NAME: &str = "run_manifests.jsonl";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub started: String,
    pub finished: String,
    pub status: String,
    pub artifact_hashes: BTreeMap<String, String>,
}

/// Collects manifest fields while a command runs and appends the record
/// when the command finishes, successfully or not.
pub struct ManifestRecorder {
    manifest: RunManifest,
    path: Option<PathBuf>,
}

impl ManifestRecorder {
    pub fn new(command: &str, explicit_path: Option<PathBuf>) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
                seed: None,
                started: chrono::Utc::now().to_rfc3339(),
                finished: String::new(),
                status: String::new(),
                artifact_hashes: BTreeMap::new(),
            },
            path: explicit_path,
        }
    }

    pub fn set_config(&mut self, config: impl Serialize) {
        self.manifest.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) {
        self.manifest
            .inputs
            .push(path.as_ref().display().to_string());
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) {
        let path = path.as_ref();
        // default manifest location: beside the first output
        if self.path.is_none() {
            let dir = if path.is_dir() {
                path
            } else {
                path.parent().unwrap_or(Path::new("."))
            };
            self.path = Some(dir.join(MANIFEST_FILE_NAME));
        }
        self.manifest.outputs.push(path.display().to_string());
    }

    /// Records the sha256 of an artifact file (head or thresholds).
    pub fn hash_artifact(&mut self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.manifest
            .artifact_hashes
            .insert(path.display().to_string(), hex);
        Ok(())
    }

    /// Appends the record. Failures to write the manifest are logged, not
    /// fatal: the command's own outcome takes precedence.
    pub fn finish(mut self, status: Result<(), &str>) {
        self.manifest.finished = chrono::Utc::now().to_rfc3339();
        self.manifest.status = match status {
            Ok(()) => "ok".to_string(),
            Err(message) => format!("error: {message}"),
        };
        let Some(path) = self.path.take() else {
            log::debug!("no output path resolved; skipping manifest record");
            return;
        };
        let append = || -> std::io::Result<()> {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)?;
            serde_json::to_writer(&mut file, &self.manifest)?;
            file.write_all(b"\n")?;
            Ok(())
        };
        if let Err(e) = append() {
            log::warn!("could not append run manifest to {}: {e}", path.display());
        }
    }
}
