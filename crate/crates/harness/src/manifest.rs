//! Run manifests: one per trained fleet, next to the effective config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use relaygen::agent::{Agent, Algorithm};

use crate::config::{hash_text, ExperimentConfig, Variant};
use crate::{read_file, read_text, write_file, HarnessError};

pub const MANIFEST_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One seed of a fleet. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_log: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive: Option<String>,
    pub env_steps: u64,
    pub updates: u64,
    pub restored_episodes: u64,
    pub wall_clock_s: f64,
    /// Mean deterministic return from d0 after training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinary_return: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub name: String,
    pub config_file: String,
    pub config_hash: String,
    pub env_id: String,
    pub variant: Variant,
    pub algorithm: Algorithm,
    pub total_steps: u64,
    /// Start-state pool shared by a naive fleet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<String>,
    pub runs: Vec<RunRecord>,
}

pub fn run_id(name: &str, seed: u64) -> String {
    format!("{name}-s{seed}")
}

/// A manifest together with the directory it lives in.
#[derive(Clone, Debug)]
pub struct LoadedManifest {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA,
            name: config.name.clone(),
            config_file: CONFIG_FILE.into(),
            config_hash: config.hash(),
            env_id: config.env.env_id().into(),
            variant: config.variant,
            algorithm: config.algorithm(),
            total_steps: config.total_steps,
            pool: None,
            runs: Vec::new(),
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    /// Writes the effective config and the manifest into `dir`.
    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> Result<(), HarnessError> {
        write_file(&dir.join(&self.config_file), config.effective_text())?;
        write_file(&dir.join(MANIFEST_FILE), self.to_text())
    }

    pub fn failed_runs(&self) -> usize {
        self.runs
            .iter()
            .filter(|r| r.status == RunStatus::Failed)
            .count()
    }
}

/// Loads a manifest (given the file or its directory) and checks that the
/// stored config still hashes to the recorded value.
pub fn load(path: &Path) -> Result<LoadedManifest, HarnessError> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let dir = file
        .parent()
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let bad = |msg: String| HarnessError::Manifest {
        path: file.clone(),
        msg,
    };
    let text = read_text(&file)?;
    let raw: toml::Table = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let version = raw
        .get("schema_version")
        .and_then(toml::Value::as_integer)
        .unwrap_or(-1);
    if version != i64::from(MANIFEST_SCHEMA) {
        return Err(HarnessError::Schema {
            path: file.clone(),
            found: u32::try_from(version).unwrap_or(0),
            expected: MANIFEST_SCHEMA,
        });
    }
    let manifest: RunManifest = raw
        .try_into()
        .map_err(|e: toml::de::Error| bad(e.to_string()))?;
    let config_text = read_text(&dir.join(&manifest.config_file))?;
    if hash_text(&config_text) != manifest.config_hash {
        return Err(bad("stored config does not match config_hash".into()));
    }
    let config = ExperimentConfig::from_toml(&config_text, None)?;
    if config.env.env_id() != manifest.env_id {
        return Err(bad(format!(
            "config env {} differs from manifest env {}",
            config.env.env_id(),
            manifest.env_id
        )));
    }
    Ok(LoadedManifest {
        dir,
        manifest,
        config,
    })
}

impl LoadedManifest {
    /// Checkpoints of successful runs, in manifest order.
    pub fn agents(&self) -> Vec<(String, Result<Agent, String>)> {
        self.manifest
            .runs
            .iter()
            .filter(|r| r.status == RunStatus::Ok)
            .map(|r| (r.id.clone(), self.load_agent(r)))
            .collect()
    }

    pub fn load_agent(&self, run: &RunRecord) -> Result<Agent, String> {
        let rel = run
            .checkpoint
            .as_ref()
            .ok_or_else(|| format!("{}: no checkpoint", run.id))?;
        let bytes = read_file(&self.dir.join(rel)).map_err(|e| e.to_string())?;
        let agent = Agent::from_bytes(&bytes).map_err(|e| format!("{}: {e}", run.id))?;
        if agent.env_id() != self.manifest.env_id {
            return Err(format!("{}: checkpoint is for {}", run.id, agent.env_id()));
        }
        Ok(agent)
    }

    pub fn checkpoint_path(&self, run: &RunRecord) -> Option<PathBuf> {
        run.checkpoint.as_ref().map(|c| self.dir.join(c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (ExperimentConfig, RunManifest) {
        let cfg = ExperimentConfig::from_toml("name = \"m\"", None).unwrap();
        let mut m = RunManifest::new(&cfg);
        m.runs.push(RunRecord {
            id: run_id("m", 0),
            seed: 0,
            status: RunStatus::Ok,
            error: None,
            checkpoint: Some("checkpoints/m-s0.stac".into()),
            training_log: Some("logs/m-s0.csv".into()),
            archive: None,
            env_steps: 10,
            updates: 0,
            restored_episodes: 0,
            wall_clock_s: 0.5,
            ordinary_return: Some(3.5),
        });
        m.runs.push(RunRecord {
            id: run_id("m", 1),
            seed: 1,
            status: RunStatus::Failed,
            error: Some("diverged".into()),
            checkpoint: None,
            training_log: None,
            archive: None,
            env_steps: 0,
            updates: 0,
            restored_episodes: 0,
            wall_clock_s: 0.0,
            ordinary_return: None,
        });
        (cfg, m)
    }

    #[test]
    fn manifest_round_trips_and_checks_hash() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, m) = sample();
        m.write(dir.path(), &cfg).unwrap();
        let loaded = load(dir.path()).unwrap();
        assert_eq!(loaded.manifest, m);
        assert_eq!(loaded.config, cfg);
        assert_eq!(m.failed_runs(), 1);

        let cfg_path = dir.path().join(CONFIG_FILE);
        let mut text = std::fs::read_to_string(&cfg_path).unwrap();
        text.push('\n');
        std::fs::write(&cfg_path, text).unwrap();
        assert!(matches!(
            load(dir.path()),
            Err(HarnessError::Manifest { .. })
        ));
    }

    #[test]
    fn wrong_schema_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let (cfg, mut m) = sample();
        m.schema_version = 9;
        m.write(dir.path(), &cfg).unwrap();
        assert!(matches!(
            load(dir.path()),
            Err(HarnessError::Schema { found: 9, .. })
        ));
    }
}
