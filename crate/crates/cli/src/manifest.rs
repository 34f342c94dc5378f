//! Run manifests: config hash, seed, and input/output digests, written next
//! to every command's artifacts so a run can be reproduced exactly. Two
//! byte-identical runs produce identical manifests except `timing_ms`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub template_version: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub timing_ms: u64,
}

pub struct ManifestBuilder {
    command: String,
    config_sha256: String,
    seed: u64,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started: Instant,
    out_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot hash {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl ManifestBuilder {
    pub fn start(
        command: &str,
        config_path: &Path,
        seed: u64,
        out_dir: &Path,
    ) -> Result<ManifestBuilder> {
        let config_bytes = std::fs::read(config_path)
            .with_context(|| format!("cannot read config {}", config_path.display()))?;
        Ok(ManifestBuilder {
            command: command.to_string(),
            config_sha256: sha256_hex(&config_bytes),
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: Instant::now(),
            out_dir: out_dir.to_path_buf(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    /// Writes `{out_dir}/{command}.manifest.json` and returns its path.
    pub fn finish(self) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command.clone(),
            config_sha256: self.config_sha256,
            seed: self.seed,
            template_version: senticast_core::gateway::TEMPLATE_VERSION.to_string(),
            inputs: self.inputs,
            outputs: self.outputs,
            timing_ms: self.started.elapsed().as_millis() as u64,
        };
        let path = self.out_dir.join(format!("{}.manifest.json", self.command));
        let body = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, body.as_bytes())
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
