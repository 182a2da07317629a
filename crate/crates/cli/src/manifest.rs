use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use gsc_core::RunConfig;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest(path: &Path) -> std::io::Result<FileDigest> {
    let bytes = std::fs::read(path)?;
    let hash = Sha256::digest(&bytes);
    let sha256 = hash.iter().map(|b| format!("{b:02x}")).collect();
    Ok(FileDigest { path: path.to_path_buf(), sha256 })
}

#[derive(Debug, Default, Serialize)]
pub struct Timings {
    pub total_seconds: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub epoch_seconds: Vec<f64>,
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
    pub timings: Timings,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed: config.train.seed,
            config: config.clone(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            timings: Timings::default(),
        }
    }
}
