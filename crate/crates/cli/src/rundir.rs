//! Run-directory layout and the manifest that inventories it.
//!
//! Layout: `<root>/<epoch-secs>-<tag>/{manifest.json, images/, masks/,
//! records/, baseline/, plots/, checkpoints/}`. `SCOREADV_RUN_DIR`
//! overrides the configured root. The manifest's only nondeterministic
//! fields are `created_unix` and `wall_time_s`; everything else is a pure
//! function of the config, so reruns produce byte-identical artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use scoreadv_core::error::{Error, Result};
use scoreadv_core::guidance::GuidanceConfig;
use scoreadv_core::models::checkpoint::file_sha256;
use scoreadv_core::schedule::ScheduleSpec;

use crate::config::Config;

pub const ENV_RUN_ROOT: &str = "SCOREADV_RUN_DIR";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub created_unix: u64,
    pub config: Config,
    /// Resolved guidance knobs actually used.
    pub guidance: GuidanceConfig,
    pub schedule: ScheduleSpec,
    pub dataset_checksum: String,
    /// Train-run directory the models came from (absent for `train` itself).
    pub models_dir: Option<String>,
    /// Checkpoint-file hashes keyed by file name.
    pub model_checksums: BTreeMap<String, String>,
    pub wall_time_s: f64,
    /// Relative path -> SHA-256 of every artifact in this run directory.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: &Config) -> Manifest {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config: config.clone(),
            guidance: config.guidance_config(),
            schedule: config.schedule.spec(),
            dataset_checksum: String::new(),
            models_dir: None,
            model_checksums: BTreeMap::new(),
            wall_time_s: 0.0,
            outputs: BTreeMap::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::ingestion(format!("manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::ingestion(format!("manifest {}: {e}", path.display())))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    /// Hashes an artifact under `dir` and records it in the inventory.
    pub fn record(&mut self, dir: &Path, rel: &str) -> Result<()> {
        let sha = file_sha256(&dir.join(rel))?;
        self.outputs.insert(rel.to_string(), sha);
        Ok(())
    }
}

/// Creates `<root>/<epoch-secs>-<tag>`, appending a counter on collision.
pub fn create_run_dir(config_root: &str, tag: &str) -> Result<PathBuf> {
    let root = std::env::var(ENV_RUN_ROOT).unwrap_or_else(|_| config_root.to_string());
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let base = PathBuf::from(root);
    fs::create_dir_all(&base)?;
    let mut name = format!("{secs}-{tag}");
    let mut n = 1;
    while base.join(&name).exists() {
        n += 1;
        name = format!("{secs}-{tag}-{n}");
    }
    let dir = base.join(name);
    fs::create_dir(&dir)?;
    Ok(dir)
}

/// Subdirectory helper; creates it if needed and returns the path.
pub fn subdir(run: &Path, name: &str) -> Result<PathBuf> {
    let d = run.join(name);
    fs::create_dir_all(&d)?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dirs_do_not_collide() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("runs");
        let a = create_run_dir(root.to_str().unwrap(), "x").unwrap();
        let b = create_run_dir(root.to_str().unwrap(), "x").unwrap();
        assert_ne!(a, b);
        assert!(a.is_dir() && b.is_dir());
    }

    #[test]
    fn manifest_roundtrips() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = Config::default();
        let mut m = Manifest::new("attack", &cfg);
        fs::write(tmp.path().join("a.txt"), b"hello").unwrap();
        m.record(tmp.path(), "a.txt").unwrap();
        m.save(tmp.path()).unwrap();
        let back = Manifest::load(tmp.path()).unwrap();
        assert_eq!(back.command, "attack");
        assert_eq!(back.outputs.len(), 1);
        assert_eq!(back.guidance, cfg.guidance_config());
    }
}
