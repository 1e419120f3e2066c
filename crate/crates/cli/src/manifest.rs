//! Provenance record written next to every command's outputs.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub version: &'static str,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    /// Fully resolved configuration, after flag overrides.
    pub config: Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    /// Command-specific details such as the ablation switch or sweep cells.
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl Manifest {
    pub fn new(command: &'static str, config: Value, seed: Option<u64>) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            args: std::env::args().collect(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            details: Value::Null,
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(InputHash {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(self).map_err(vaps_core::Error::from)?;
        std::fs::write(&path, json).map_err(|e| vaps_core::Error::io(&path, e))?;
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| vaps_core::Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Fails with a validation error when an input path does not exist.
pub fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::OutputDir {
        path: dir.to_path_buf(),
        source,
    })
}
