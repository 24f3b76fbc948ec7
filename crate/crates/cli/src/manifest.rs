//! Run manifests written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Result;
use emoreward::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::io::{file_digest, sha256_hex, to_pretty_json, write_atomic};

pub const MANIFEST_SCHEMA: &str = "manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// SHA-256 of the effective configuration as JSON.
    pub config_hash: String,
    pub input_digests: BTreeMap<String, String>,
    pub output_digests: BTreeMap<String, String>,
    /// Unix seconds; `SOURCE_DATE_EPOCH` pins both timestamps.
    pub started_at: u64,
    pub finished_at: u64,
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when it is set.
pub fn timestamp() -> u64 {
    if let Some(fixed) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
    {
        return fixed;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn config_hash(config: &PipelineConfig) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))
}

/// Collects outputs for one command and writes them with the manifest.
pub struct RunOutput {
    manifest: RunManifest,
    files: Vec<(String, Vec<u8>)>,
}

impl RunOutput {
    pub fn new(command: &str, config: &PipelineConfig, seed: u64) -> Self {
        Self {
            manifest: RunManifest {
                schema: MANIFEST_SCHEMA.into(),
                command: command.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                seed,
                config_hash: config_hash(config),
                input_digests: BTreeMap::new(),
                output_digests: BTreeMap::new(),
                started_at: timestamp(),
                finished_at: 0,
            },
            files: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.manifest
            .input_digests
            .insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn file(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    /// Writes every output file and then the manifest, each atomically.
    pub fn write(mut self, dir: &Path) -> Result<RunManifest> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            write_atomic(&dir.join(name), bytes)?;
            self.manifest
                .output_digests
                .insert(name.clone(), sha256_hex(bytes));
        }
        self.manifest.finished_at = timestamp();
        write_atomic(
            &dir.join(MANIFEST_FILE),
            to_pretty_json(&self.manifest).as_bytes(),
        )?;
        Ok(self.manifest)
    }
}
