//! Run manifests: what a command read, what it wrote, and the checksums of
//! every output so a rerun can be compared byte for byte.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl Artifact {
    pub fn of(path: &Path) -> CliResult<Self> {
        let data = std::fs::read(path).map_err(|e| interpole::Error::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Ok(Artifact {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&data)),
            bytes: data.len() as u64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Effective settings after merging defaults, config file and flags.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn build(
        command: &str,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: &[&Path],
        outputs: &[&Path],
        elapsed: Duration,
    ) -> CliResult<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seed,
            inputs: inputs.iter().map(|p| Artifact::of(p)).collect::<CliResult<_>>()?,
            outputs: outputs.iter().map(|p| Artifact::of(p)).collect::<CliResult<_>>()?,
            wall_clock_seconds: elapsed.as_secs_f64(),
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        interpole::io::write_text(path, &interpole::io::to_pretty_json(self))?;
        Ok(())
    }
}

/// `dir/name.ext` -> `dir/name.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}
