use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Record of one subcommand run. Holds the full normalized config, so
/// `texlab <command> --config <run dir>/config.cfg` repeats the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub deterministic: bool,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub software_version: String,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn begin(command: &str, cfg: &RunConfig, deterministic: bool) -> Self {
        Self {
            command: command.to_string(),
            config_hash: cfg.hash(),
            config: cfg.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            seeds: BTreeMap::from([("seed".to_string(), cfg.seed())]),
            deterministic,
            started_unix: unix_now(),
            finished_unix: 0.0,
            artifacts: Vec::new(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn add_seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }

    pub fn add_artifact(&mut self, run_dir: &Path, path: &Path) {
        let rel: PathBuf = path.strip_prefix(run_dir).unwrap_or(path).to_path_buf();
        self.artifacts.push(rel.to_string_lossy().into_owned());
    }

    /// Stamps the end time and writes the manifest atomically into `run_dir`.
    pub fn finish(mut self, run_dir: &Path) -> CliResult<PathBuf> {
        self.finished_unix = unix_now();
        self.artifacts.sort();
        let path = run_dir.join(MANIFEST_FILE);
        texlab_core::io::write_json(&self, &path)?;
        Ok(path)
    }
}
