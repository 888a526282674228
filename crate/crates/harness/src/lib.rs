//! Experiment orchestration: training fleets, the relay matrix, ablation
//! sweeps, state export and report rendering.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod config;
pub mod export;
pub mod fleet;
pub mod harvest_cache;
pub mod manifest;
pub mod relay_cmd;
pub mod report;
pub mod sweep;

pub use config::{ExperimentConfig, Profile, Variant};
pub use manifest::{RunManifest, RunRecord, RunStatus};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
    #[error("{path}: schema version {found}, expected {expected}")]
    Schema {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("incomparable inputs: {0}")]
    Incomparable(String),
    #[error(transparent)]
    Relay(#[from] relaygen::relay::RelayError),
    #[error(transparent)]
    Sta(#[from] relaygen::sta::StaError),
    #[error(transparent)]
    Agent(#[from] relaygen::agent::AgentError),
    #[error(transparent)]
    Env(#[from] relaygen::env::EnvError),
    #[error(transparent)]
    Codec(#[from] relaygen::codec::CodecError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0} job(s) failed")]
    JobsFailed(usize),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, HarnessError> {
    std::fs::read(path).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}
