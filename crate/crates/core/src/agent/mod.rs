//! Actor-critic learners (SAC and TD3), their replay buffer and checkpoint
//! format.

mod checkpoint;
mod critics;
pub mod losses;
mod replay;
mod sac;
mod td3;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use critics::TwinCritics;
pub use replay::{Batch, ReplayBuffer};
pub use sac::SacAgent;
pub use td3::Td3Agent;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::env::{ActionVector, Observation};
use crate::nn::NnError;
use crate::rng::Stream;

/// Largest action magnitude handed out by policies; keeps actions strictly
/// inside the open unit box.
pub const ACTION_LIMIT: f64 = 1.0 - 1e-7;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("non-finite training quantity; state dump:\n{0}")]
    Diverged(String),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CodecError),
    #[error("invalid agent config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Sac,
    Td3,
}

impl Algorithm {
    pub fn id(self) -> u8 {
        match self {
            Algorithm::Sac => 0,
            Algorithm::Td3 => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Algorithm::Sac),
            1 => Some(Algorithm::Td3),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sac => "sac",
            Algorithm::Td3 => "td3",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Evaluation policy: `tanh(mean)` for SAC, the raw deterministic policy for TD3.
    Deterministic,
    /// Exploration policy.
    Stochastic,
}

/// Learner hyperparameters. TD3-only fields are ignored by SAC and vice versa.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub hidden_sizes: Vec<usize>,
    pub discount: f64,
    pub polyak_tau: f64,
    pub batch_size: usize,
    /// `None` keeps every transition; written as 0 in config text.
    #[serde(with = "unbounded_as_zero")]
    pub replay_capacity: Option<usize>,
    pub start_steps: u64,
    pub update_after: u64,
    pub update_every: u64,
    pub lr: f64,
    pub learn_alpha: bool,
    pub initial_alpha: f64,
    pub exploration_noise: f64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Sac,
            hidden_sizes: vec![256, 256],
            discount: 0.99,
            polyak_tau: 0.005,
            batch_size: 256,
            replay_capacity: Some(1_000_000),
            start_steps: 10_000,
            update_after: 1_000,
            update_every: 1,
            lr: 3e-4,
            learn_alpha: true,
            initial_alpha: 0.2,
            exploration_noise: 0.1,
            target_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
        }
    }
}

impl AgentConfig {
    pub fn td3() -> Self {
        Self {
            algorithm: Algorithm::Td3,
            ..Self::default()
        }
    }

    /// `(64, 64)` networks and a shorter warm-up.
    pub fn desk(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            hidden_sizes: vec![64, 64],
            start_steps: 1_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return bad("hidden_sizes must be non-empty and positive");
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad("discount must be in (0, 1)");
        }
        if !(self.polyak_tau > 0.0 && self.polyak_tau < 1.0) {
            return bad("polyak_tau must be in (0, 1)");
        }
        if self.batch_size == 0 || self.update_every == 0 || self.policy_delay == 0 {
            return bad("batch_size, update_every and policy_delay must be positive");
        }
        if !(self.lr > 0.0) || !(self.initial_alpha > 0.0) {
            return bad("lr and initial_alpha must be positive");
        }
        Ok(())
    }

    /// Canonical text form stored in checkpoints and manifests.
    pub fn to_canonical_text(&self) -> String {
        toml::to_string(self).expect("agent config serializes")
    }

    pub fn from_canonical_text(text: &str) -> Result<Self, AgentError> {
        toml::from_str(text).map_err(|e| AgentError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateDiagnostics {
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
    pub mean_q: f64,
}

/// A trained or training agent of either family.
#[derive(Clone, Debug, PartialEq)]
pub enum Agent {
    Sac(SacAgent),
    Td3(Td3Agent),
}

impl Agent {
    pub fn new(
        config: AgentConfig,
        env_id: &str,
        obs_dim: usize,
        act_dim: usize,
        rng: Stream,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        Ok(match config.algorithm {
            Algorithm::Sac => Agent::Sac(SacAgent::new(config, env_id, obs_dim, act_dim, rng)),
            Algorithm::Td3 => Agent::Td3(Td3Agent::new(config, env_id, obs_dim, act_dim, rng)),
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        match self {
            Agent::Sac(_) => Algorithm::Sac,
            Agent::Td3(_) => Algorithm::Td3,
        }
    }

    pub fn config(&self) -> &AgentConfig {
        match self {
            Agent::Sac(a) => &a.config,
            Agent::Td3(a) => &a.config,
        }
    }

    pub fn env_id(&self) -> &str {
        match self {
            Agent::Sac(a) => &a.env_id,
            Agent::Td3(a) => &a.env_id,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Agent::Sac(a) => a.obs_dim,
            Agent::Td3(a) => a.obs_dim,
        }
    }

    pub fn act_dim(&self) -> usize {
        match self {
            Agent::Sac(a) => a.act_dim,
            Agent::Td3(a) => a.act_dim,
        }
    }

    pub fn total_env_steps(&self) -> u64 {
        match self {
            Agent::Sac(a) => a.total_env_steps,
            Agent::Td3(a) => a.total_env_steps,
        }
    }

    pub fn add_env_steps(&mut self, n: u64) {
        match self {
            Agent::Sac(a) => a.total_env_steps += n,
            Agent::Td3(a) => a.total_env_steps += n,
        }
    }

    pub fn update_count(&self) -> u64 {
        match self {
            Agent::Sac(a) => a.update_count,
            Agent::Td3(a) => a.update_count,
        }
    }

    pub fn critics(&self) -> &TwinCritics {
        match self {
            Agent::Sac(a) => &a.critics,
            Agent::Td3(a) => &a.critics,
        }
    }

    /// Policy actions for a batch of `f32` observation rows.
    pub fn act_rows(&self, obs: &[f32], batch: usize, mode: Mode, rng: &mut Stream) -> Vec<f32> {
        match self {
            Agent::Sac(a) => a.act_rows(obs, batch, mode, rng),
            Agent::Td3(a) => a.act_rows(obs, batch, mode, rng),
        }
    }

    pub fn act(&self, obs: &Observation, mode: Mode, rng: &mut Stream) -> ActionVector {
        let a = self.act_rows(&obs.to_f32(), 1, mode, rng);
        ActionVector::new(a.iter().map(|v| f64::from(*v)).collect())
    }

    /// Conservative critic value `min(Q1, Q2)` at `(obs, act)`.
    pub fn q_value(&self, obs: &Observation, act: &ActionVector) -> f32 {
        let a: Vec<f32> = act.values.iter().map(|v| *v as f32).collect();
        self.critics().min_q(&obs.to_f32(), &a, 1)[0]
    }

    /// `Q(s, pi(s))` under the deterministic policy, for a batch of rows.
    pub fn q_at_policy(&self, obs: &[f32], batch: usize) -> Vec<f32> {
        if batch == 0 {
            return Vec::new();
        }
        // deterministic mode never draws from the stream
        let mut unused = Stream::from_seed(0);
        let act = self.act_rows(obs, batch, Mode::Deterministic, &mut unused);
        self.critics().min_q(obs, &act, batch)
    }

    pub fn update(&mut self, batch: &Batch) -> Result<UpdateDiagnostics, AgentError> {
        match self {
            Agent::Sac(a) => a.update(batch),
            Agent::Td3(a) => a.update(batch),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AgentError> {
        checkpoint::decode(bytes)
    }
}

mod unbounded_as_zero {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let n = u64::deserialize(d)?;
        Ok((n != 0).then_some(n as usize))
    }
}

pub(crate) fn clamp_action(v: f32) -> f32 {
    v.clamp(-ACTION_LIMIT as f32, ACTION_LIMIT as f32)
}

pub(crate) fn normals(rng: &mut Stream, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.normal() as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(alg: Algorithm) -> Agent {
        let cfg = AgentConfig {
            hidden_sizes: vec![16, 16],
            ..AgentConfig::desk(alg)
        };
        Agent::new(cfg, "planar-hopper-v1", 6, 2, Stream::from_seed(1)).unwrap()
    }

    #[test]
    fn deterministic_action_is_repeatable_and_bounded() {
        for alg in [Algorithm::Sac, Algorithm::Td3] {
            let a = agent(alg);
            let obs = Observation {
                values: vec![1.2, 0.3, -0.5, 0.1, 1.0, 0.0],
            };
            let mut rng = Stream::from_seed(2);
            let x = a.act(&obs, Mode::Deterministic, &mut rng);
            let y = a.act(&obs, Mode::Deterministic, &mut rng);
            assert_eq!(x, y);
            let big = Observation {
                values: vec![1e4; 6],
            };
            for m in [Mode::Deterministic, Mode::Stochastic] {
                let z = a.act(&big, m, &mut rng);
                assert!(z.values.iter().all(|v| v.abs() < 1.0));
            }
        }
    }

    #[test]
    fn stochastic_action_is_reproducible_under_seed() {
        let a = agent(Algorithm::Sac);
        let obs = Observation {
            values: vec![1.0; 6],
        };
        let x = a.act(&obs, Mode::Stochastic, &mut Stream::from_seed(9));
        let y = a.act(&obs, Mode::Stochastic, &mut Stream::from_seed(9));
        let z = a.act(&obs, Mode::Stochastic, &mut Stream::from_seed(10));
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn fresh_critic_values_are_small() {
        // Output layer init is U(-1/sqrt(64), 1/sqrt(64)) over 64 rectified
        // hidden units of O(1) magnitude, so |Q| stays well under 5.
        let cfg = AgentConfig::desk(Algorithm::Sac);
        let a = Agent::new(cfg, "planar-hopper-v1", 6, 2, Stream::from_seed(5)).unwrap();
        let mut rng = Stream::from_seed(6);
        for _ in 0..200 {
            let obs = Observation {
                values: (0..6).map(|_| rng.normal()).collect(),
            };
            let act = ActionVector::new(vec![rng.uniform() * 2.0 - 1.0, rng.uniform() * 2.0 - 1.0]);
            let q = a.q_value(&obs, &act);
            assert!(q.is_finite() && q.abs() < 5.0, "{q}");
        }
    }

    #[test]
    fn config_text_round_trips() {
        let mut c = AgentConfig::td3();
        c.replay_capacity = None;
        c.lr = 1.234_567_891e-4;
        let back = AgentConfig::from_canonical_text(&c.to_canonical_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let c = AgentConfig {
            discount: 1.0,
            ..AgentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = AgentConfig {
            hidden_sizes: vec![],
            ..AgentConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
