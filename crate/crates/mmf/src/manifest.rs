//! Output directories whose every file is recorded in `manifest.json`.

use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    /// `ok`, `halted`, or `failed`.
    pub status: String,
    /// Paths relative to the output directory, in write order; includes the
    /// manifest itself.
    pub artifacts: Vec<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Writes files under one root and remembers each relative path.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    command: String,
    config_hash: String,
    seed: u64,
    started_at: String,
    artifacts: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, config_hash: String, seed: u64) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            command: command.into(),
            config_hash,
            seed,
            started_at: now(),
            artifacts: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        if !self.artifacts.iter().any(|a| a == rel) {
            self.artifacts.push(rel.to_string());
        }
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("value serializes");
        text.push('\n');
        self.write(rel, text)
    }

    pub fn artifacts(&self) -> &[String] {
        &self.artifacts
    }

    /// Writes the manifest and returns it.
    pub fn finish(mut self, status: &str) -> CliResult<RunManifest> {
        self.artifacts.push(MANIFEST_NAME.into());
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            started_at: self.started_at.clone(),
            finished_at: now(),
            status: status.into(),
            artifacts: self.artifacts.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.root.join(MANIFEST_NAME);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
