use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fsutil::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a subcommand: its full argument vector and the
/// resolved configuration it actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub outputs: Vec<PathBuf>,
    pub duration_secs: f64,
}

/// Collects outputs while a run is in progress.
#[derive(Debug)]
pub struct RunRecorder {
    subcommand: String,
    args: Vec<String>,
    started: Instant,
    outputs: Vec<PathBuf>,
}

impl RunRecorder {
    pub fn start(subcommand: &str, args: Vec<String>) -> Self {
        RunRecorder {
            subcommand: subcommand.to_string(),
            args,
            started: Instant::now(),
            outputs: Vec::new(),
        }
    }

    pub fn output(&mut self, path: impl AsRef<Path>) {
        self.outputs.push(path.as_ref().to_path_buf());
    }

    /// Writes `manifest.json` into `dir`.
    pub fn finish(self, dir: &Path, config: serde_json::Value, seed: u64) -> Result<RunManifest> {
        let m = RunManifest {
            subcommand: self.subcommand,
            args: self.args,
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: self.outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), json.as_bytes())?;
        Ok(m)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(crate::error::Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| crate::error::Error::parse(path, e.line(), e.to_string()))
}
