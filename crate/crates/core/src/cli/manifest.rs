//! Run manifests: everything needed to reproduce a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::CliError;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatVersions {
    pub manifest: u32,
    pub checkpoint: u32,
    pub metrics_csv: u32,
}

impl Default for FormatVersions {
    fn default() -> Self {
        FormatVersions { manifest: MANIFEST_VERSION, checkpoint: crate::nn::checkpoint::FORMAT_VERSION, metrics_csv: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputHash {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub crate_version: String,
    pub seed: u64,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub config_sha256: String,
    pub binary_sha256: String,
    pub formats: FormatVersions,
    /// Resolved configuration with `runtime.seeds` narrowed to this run.
    pub config: ExperimentConfig,
    pub outputs: Vec<OutputHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Hash of the running executable, or `"unknown"` when it cannot be read.
pub fn binary_sha256() -> String {
    std::env::current_exe()
        .ok()
        .and_then(|p| fs::read(p).ok())
        .map(|b| sha256_hex(&b))
        .unwrap_or_else(|| "unknown".into())
}

pub fn config_sha256(cfg: &ExperimentConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("serializable config").as_bytes())
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, seed: u64) -> Self {
        let mut config = cfg.clone();
        config.runtime.seeds = vec![seed];
        Manifest {
            command: command.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            k: cfg.generation.k.unwrap_or(0),
            tau: cfg.generation.tau,
            alpha: cfg.generation.alpha,
            config_sha256: config_sha256(&config),
            binary_sha256: binary_sha256(),
            formats: FormatVersions::default(),
            config,
            outputs: Vec::new(),
        }
    }

    /// Hashes `files` (relative to `dir`) and writes the manifest there.
    pub fn finish(mut self, dir: &Path, files: &[PathBuf]) -> Result<Self, CliError> {
        let mut outputs = Vec::with_capacity(files.len());
        for f in files {
            let rel = f.strip_prefix(dir).unwrap_or(f);
            outputs.push(OutputHash { path: rel.to_string_lossy().replace('\\', "/"), sha256: sha256_file(f)? });
        }
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        self.outputs = outputs;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).expect("serializable manifest");
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(self)
    }

    /// Reads a manifest from a file or from a run directory containing one.
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", file.display())))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("malformed manifest {}: {e}", file.display())))?;
        if m.formats.manifest != MANIFEST_VERSION {
            return Err(CliError::Config(format!("unsupported manifest version {}", m.formats.manifest)));
        }
        if config_sha256(&m.config) != m.config_sha256 {
            return Err(CliError::Config(format!("config hash mismatch in {}", file.display())));
        }
        Ok(m)
    }

    pub fn output(&self, path: &str) -> Option<&OutputHash> {
        self.outputs.iter().find(|o| o.path == path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvId;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn manifest_round_trips_and_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::paper_defaults(EnvId::RepeatedMatrix, super::super::config::Method::Lbrdiv);
        let out = dir.path().join("a.txt");
        fs::write(&out, "hello").unwrap();
        let m = Manifest::new("generate", &cfg, 3).finish(dir.path(), &[out]).unwrap();
        assert_eq!((m.k, m.tau, m.seed), (3, Some(1.0), 3));
        assert_eq!(m.config.runtime.seeds, vec![3]);
        let back = Manifest::read(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.output("a.txt").unwrap().sha256, sha256_hex(b"hello"));

        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"total_steps\": 1000000", "\"total_steps\": 5");
        fs::write(&path, text).unwrap();
        assert!(matches!(Manifest::read(&path), Err(CliError::Config(_))));
    }
}
