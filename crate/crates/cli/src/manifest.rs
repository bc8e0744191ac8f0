//! Run manifests: every subcommand that writes artifacts also records what
//! it did — the normalized config snapshot, input hashes, artifact paths,
//! tool version, and timestamps — so a run can be reproduced from its
//! manifest alone.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub timestamp: String,
    /// Normalized configuration; re-running with this snapshot and the same
    /// seed reproduces the metrics bit-for-bit.
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            tool: "boundseg",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            config,
            inputs: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes = std::fs::read(path)?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push(InputHash { path: path.to_path_buf(), sha256: hex });
        Ok(())
    }

    pub fn add_artifact(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    /// Writes `run_manifest.json` into the output directory.
    pub fn write(&self, out_dir: &Path) -> anyhow::Result<()> {
        let path = out_dir.join("run_manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
