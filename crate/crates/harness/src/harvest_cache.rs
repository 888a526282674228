//! On-disk cache of harvested controllable states (RGHV files).
//!
//! A harvest depends on the stranger's weights, the env parameters, the
//! harvest-related relay settings, the master seed and the stranger id.
//! All of them go into the cache key; the failure mode and the test agents
//! do not.

use std::path::{Path, PathBuf};

use relaygen::agent::Algorithm;
use relaygen::codec::{CodecError, Reader, Writer};
use relaygen::env::{EnvConfig, EnvState};
use relaygen::relay::{ControllableState, Harvest, RelayConfig};

use crate::config::{hash_bytes, hash_text};
use crate::{write_file, HarnessError};

pub const HARVEST_MAGIC: &[u8; 4] = b"RGHV";
pub const HARVEST_VERSION: u16 = 1;

pub fn cache_key(
    checkpoint: &[u8],
    stranger_id: &str,
    env: &EnvConfig,
    cfg: &RelayConfig,
    seed: u64,
) -> String {
    let env_text = toml::to_string(env).expect("env config serializes");
    format!(
        "checkpoint = \"{}\"\nstranger = \"{stranger_id}\"\nseed = {seed}\nm_trajs = {}\neta = {}\nk_per_traj = {}\nhorizon = {}\nwithout_replacement = {}\nreturn_floor = \"{:?}\"\n[env]\n{env_text}",
        hash_bytes(checkpoint),
        cfg.m_trajs,
        cfg.eta,
        cfg.k_per_traj,
        cfg.horizon,
        cfg.sample_without_replacement,
        cfg.return_floor,
    )
}

pub fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("harvest-{}.rghv", &hash_text(key)[..16]))
}

pub fn encode(key: &str, h: &Harvest) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(HARVEST_MAGIC);
    w.u16(HARVEST_VERSION);
    w.str(key);
    w.str(&h.stranger_id);
    w.u8(h.algorithm.id());
    w.u32(h.kept_trajs as u32);
    w.u32(h.skipped_trajs as u32);
    w.u32(h.ordinary_returns.len() as u32);
    for r in &h.ordinary_returns {
        w.f64(*r);
    }
    w.u32(h.states.len() as u32);
    for s in &h.states {
        w.blob(&s.env_state.to_bytes());
        w.u32(s.source_traj as u32);
        w.u32(s.t_index as u32);
        w.f64(s.stranger_remaining_return);
    }
    w.into_inner()
}

/// Decodes a cached harvest. Returns `Ok(None)` when the stored key differs.
pub fn decode(bytes: &[u8], key: &str, env: &EnvConfig) -> Result<Option<Harvest>, HarnessError> {
    let mut r = Reader::new(bytes);
    r.magic(HARVEST_MAGIC)?;
    let version = r.u16()?;
    if version != HARVEST_VERSION {
        return Err(CodecError::Version {
            what: "harvest cache",
            found: version,
            supported: HARVEST_VERSION,
        }
        .into());
    }
    if r.str()? != key {
        return Ok(None);
    }
    let stranger_id = r.str()?;
    let algo = r.u8()?;
    let algorithm = Algorithm::from_id(algo)
        .ok_or_else(|| HarnessError::Config(format!("unknown algorithm id {algo}")))?;
    let kept_trajs = r.u32()? as usize;
    let skipped_trajs = r.u32()? as usize;
    let n = r.u32()? as usize;
    let ordinary_returns = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let n = r.u32()? as usize;
    let built = env.build();
    let mut states = Vec::with_capacity(n.min(r.remaining()));
    for _ in 0..n {
        let env_state = EnvState::from_bytes(r.blob()?)?;
        let source_traj = r.u32()? as usize;
        let t_index = r.u32()? as usize;
        let stranger_remaining_return = r.f64()?;
        states.push(ControllableState {
            observation: built.observe(&env_state),
            env_state,
            source_agent: stranger_id.clone(),
            source_traj,
            t_index,
            stranger_remaining_return,
        });
    }
    r.finish()?;
    Ok(Some(Harvest {
        stranger_id,
        algorithm,
        states,
        kept_trajs,
        skipped_trajs,
        ordinary_returns,
    }))
}

pub fn load(dir: &Path, key: &str, env: &EnvConfig) -> Option<Harvest> {
    let bytes = std::fs::read(cache_path(dir, key)).ok()?;
    match decode(&bytes, key, env) {
        Ok(h) => h,
        Err(e) => {
            log::warn!("ignoring unreadable harvest cache entry: {e}");
            None
        }
    }
}

pub fn store(dir: &Path, key: &str, h: &Harvest) -> Result<(), HarnessError> {
    write_file(&cache_path(dir, key), encode(key, h))
}
