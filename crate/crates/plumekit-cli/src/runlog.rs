//! Machine-readable run logs: inputs hash, seed, versions and timings.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::json;
use sha2::{Digest, Sha256};

pub struct RunLog {
    subcommand: String,
    seed: u64,
    started: Instant,
    inputs: Vec<(PathBuf, String)>,
    outputs: Vec<PathBuf>,
    extra: serde_json::Map<String, serde_json::Value>,
}

impl RunLog {
    pub fn new(subcommand: &str, seed: u64) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            seed,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: serde_json::Map::new(),
        }
    }

    /// Records an input file with its content hash.
    pub fn input(&mut self, path: &Path) {
        let digest = std::fs::read(path)
            .map(|bytes| {
                let mut hasher = Sha256::new();
                hasher.update(&bytes);
                format!("{:x}", hasher.finalize())
            })
            .unwrap_or_else(|_| "unreadable".to_string());
        self.inputs.push((path.to_path_buf(), digest));
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn note(&mut self, key: &str, value: serde_json::Value) {
        self.extra.insert(key.to_string(), value);
    }

    /// Writes `<out_dir>/run_log_<subcommand>.json`.
    pub fn write(&self, out_dir: &Path) -> anyhow::Result<PathBuf> {
        let elapsed_ms = self.started.elapsed().as_millis() as u64;
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let doc = json!({
            "subcommand": self.subcommand,
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "timestamp_epoch_s": timestamp,
            "elapsed_ms": elapsed_ms,
            "inputs": self.inputs.iter().map(|(p, h)| json!({
                "path": p.display().to_string(),
                "sha256": h,
            })).collect::<Vec<_>>(),
            "outputs": self.outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "extra": self.extra,
        });
        let path = out_dir.join(format!("run_log_{}.json", self.subcommand));
        std::fs::write(&path, serde_json::to_vec_pretty(&doc)?)?;
        Ok(path)
    }
}
