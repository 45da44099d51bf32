//! Run manifests: enough to re-run a command and check its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub arguments: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Digest of the effective configuration after flags, file and defaults
    /// were merged.
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::file(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Collects what a command read and wrote, then writes `manifest.json`.
pub struct Recorder {
    out_dir: PathBuf,
    manifest: Manifest,
}

impl Recorder {
    pub fn new(command: &str, arguments: Vec<String>, out_dir: &Path) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            manifest: Manifest {
                tool: "uwslam",
                version: env!("CARGO_PKG_VERSION"),
                command: command.into(),
                arguments,
                seed: None,
                config_sha256: String::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn config(&mut self, serialized: &str) {
        self.manifest.config_sha256 = sha256_hex(serialized.as_bytes());
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let sha256 = digest_file(path)?;
        self.manifest.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    /// Writes `bytes` to `name` under the output directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::file(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::file(&path, e))?;
        self.manifest.outputs.push(FileDigest {
            path: name.into(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn finish(self) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.out_dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| CliError::file(&path, e))
    }
}
