//! Per-run manifest: config hash, input digests, row counts and timings.
//!
//! Kept in `manifest.json` next to the artifacts. It is the only output
//! that varies between identical runs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub rows: BTreeMap<String, u64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

impl RunManifest {
    /// Loads the manifest in `dir`, or starts a fresh one.
    pub fn open(dir: &Path) -> Self {
        std::fs::read(dir.join(FILE_NAME))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    }

    pub fn describe_inputs(&mut self, config_path: &Path, inputs: &[std::path::PathBuf], seed: Option<u64>) -> io::Result<()> {
        self.tool_version = env!("CARGO_PKG_VERSION").to_string();
        self.config_hash = sha256_file(config_path)?;
        self.seed = seed;
        self.inputs.clear();
        for p in inputs {
            self.inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        Ok(())
    }

    pub fn record(&mut self, stage: &str, rows: BTreeMap<String, u64>, seconds: f64) {
        self.stages.insert(stage.to_string(), StageRecord { rows, seconds });
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(dir.join(FILE_NAME), text)
    }
}
