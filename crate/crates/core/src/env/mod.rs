//! Environment contract: reset, step, exact snapshot/restore and
//! health-based termination.
//!
//! Dynamics are pure functions over `(params, state, action)` behind the
//! [`Dynamics`] trait; [`Env`] wraps one of them with a current state so it
//! can be driven like an ordinary episodic simulator.

mod cartpole;
mod hopper;

pub use cartpole::{CartPoleBalance, CartPoleBalanceParams, CARTPOLE_ID};
pub use hopper::{PlanarHopper, PlanarHopperParams, HOPPER_ID};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::rng::Stream;

pub const ENV_STATE_MAGIC: &[u8; 4] = b"RGEV";
pub const ENV_STATE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("state belongs to env {found:?}, not {expected:?}")]
    EnvMismatch { expected: String, found: String },
    #[error("non-finite action component {index}")]
    NonFiniteAction { index: usize },
    #[error("action has {found} components, env expects {expected}")]
    ActionDim { expected: usize, found: usize },
    #[error("state has {found} coordinates, env expects {expected}")]
    StateDim { expected: usize, found: usize },
    #[error("step called before reset or restore")]
    NotStarted,
    #[error("unknown env id {0:?}")]
    UnknownEnv(String),
    #[error("state format: {0}")]
    Format(#[from] CodecError),
}

/// Complete, restorable simulator state.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub env_id: String,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub phase: u32,
    pub step_index: u64,
    pub rng_state: Vec<u8>,
}

impl EnvState {
    pub fn encode(&self, w: &mut Writer) {
        w.bytes(ENV_STATE_MAGIC);
        w.u16(ENV_STATE_VERSION);
        w.str(&self.env_id);
        w.u32((self.q.len() + self.qdot.len()) as u32);
        for c in self.q.iter().chain(&self.qdot) {
            w.f64(*c);
        }
        w.u32(self.phase);
        w.u64(self.step_index);
        w.blob(&self.rng_state);
    }

    /// Decodes one state. The split between positions and velocities is a
    /// property of the environment, looked up by `env_id`.
    pub fn decode(r: &mut Reader<'_>) -> Result<Self, EnvError> {
        r.magic(ENV_STATE_MAGIC)?;
        let version = r.u16()?;
        if version != ENV_STATE_VERSION {
            return Err(CodecError::Version {
                what: "env state",
                found: version,
                supported: ENV_STATE_VERSION,
            }
            .into());
        }
        let env_id = r.str()?;
        let n = r.u32()? as usize;
        let n_q = position_dim(&env_id).ok_or_else(|| EnvError::UnknownEnv(env_id.clone()))?;
        if n < n_q {
            return Err(EnvError::StateDim {
                expected: n_q,
                found: n,
            });
        }
        let mut coords = Vec::with_capacity(n);
        for _ in 0..n {
            coords.push(r.f64()?);
        }
        let qdot = coords.split_off(n_q);
        let phase = r.u32()?;
        let step_index = r.u64()?;
        let rng_state = r.blob()?.to_vec();
        Ok(Self {
            env_id,
            q: coords,
            qdot,
            phase,
            step_index,
            rng_state,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode(&mut w);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnvError> {
        let mut r = Reader::new(bytes);
        let s = Self::decode(&mut r)?;
        r.finish()?;
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub values: Vec<f64>,
}

impl Observation {
    pub fn to_f32(&self) -> Vec<f32> {
        self.values.iter().map(|v| *v as f32).collect()
    }
}

/// Action in the unit box. Components are clamped to `[-1, 1]` before the
/// dynamics see them.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionVector {
    pub values: Vec<f64>,
}

impl ActionVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            values: vec![0.0; d],
        }
    }

    fn clamped(&self, d_act: usize) -> Result<Vec<f64>, EnvError> {
        if self.values.len() != d_act {
            return Err(EnvError::ActionDim {
                expected: d_act,
                found: self.values.len(),
            });
        }
        self.values
            .iter()
            .enumerate()
            .map(|(index, a)| {
                if a.is_finite() {
                    Ok(a.clamp(-1.0, 1.0))
                } else {
                    Err(EnvError::NonFiniteAction { index })
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub state: EnvState,
}

impl StepResult {
    /// Canonical bytes used by replay-determinism checks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        for v in &self.observation.values {
            w.f64(*v);
        }
        w.f64(self.reward);
        w.u8(self.terminated as u8);
        w.u8(self.truncated as u8);
        self.state.encode(&mut w);
        w.into_inner()
    }
}

/// Closed interval a health variable must stay inside.
#[derive(Clone, Debug, PartialEq)]
pub struct HealthBound {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

impl HealthBound {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Uniform initial-distribution range for one coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialRange {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub d_obs: usize,
    pub d_act: usize,
    pub l_max: u64,
    pub health_bounds: Vec<HealthBound>,
    pub initial_distribution: Vec<InitialRange>,
}

/// Result of advancing a state by one control step, before the generic
/// termination/truncation bookkeeping.
#[derive(Clone, Debug)]
pub struct Transition {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
    pub phase: u32,
    pub reward: f64,
}

/// Pure environment dynamics.
pub trait Dynamics: Send + Sync {
    fn env_id(&self) -> &'static str;
    fn spec(&self) -> &EnvSpec;
    /// Draws `(q, qdot, phase)` from the initial distribution.
    fn sample_initial(&self, rng: &mut Stream) -> (Vec<f64>, Vec<f64>, u32);
    /// Advances by one control step. `action` is already clamped.
    fn advance(&self, state: &EnvState, action: &[f64]) -> Transition;
    fn observe(&self, state: &EnvState) -> Observation;
    /// Values checked against `spec().health_bounds`, in the same order.
    fn health_values(&self, state: &EnvState) -> Vec<f64>;
    fn position_dim(&self) -> usize;
    fn velocity_dim(&self) -> usize;
}

/// Positions per state for known env ids.
pub fn position_dim(env_id: &str) -> Option<usize> {
    match env_id {
        CARTPOLE_ID => Some(cartpole::POSITION_DIM),
        HOPPER_ID => Some(hopper::POSITION_DIM),
        _ => None,
    }
}

/// Which environment to build and with what parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id")]
pub enum EnvConfig {
    #[serde(rename = "cartpole-balance-v1")]
    CartPole(CartPoleBalanceParams),
    #[serde(rename = "planar-hopper-v1")]
    Hopper(PlanarHopperParams),
}

impl EnvConfig {
    pub fn by_id(env_id: &str) -> Result<Self, EnvError> {
        match env_id {
            CARTPOLE_ID => Ok(Self::CartPole(CartPoleBalanceParams::default())),
            HOPPER_ID => Ok(Self::Hopper(PlanarHopperParams::default())),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }

    pub fn env_id(&self) -> &'static str {
        match self {
            Self::CartPole(_) => CARTPOLE_ID,
            Self::Hopper(_) => HOPPER_ID,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Self::CartPole(p) => p.validate(),
            Self::Hopper(p) => p.validate(),
        }
    }

    pub fn build(&self) -> Env {
        match self {
            Self::CartPole(p) => Env::cartpole(p.clone()),
            Self::Hopper(p) => Env::hopper(p.clone()),
        }
    }
}

/// An environment instance: dynamics plus the live state. Single writer.
pub struct Env {
    dynamics: Box<dyn Dynamics>,
    current: Option<EnvState>,
}

impl Env {
    pub fn new(dynamics: Box<dyn Dynamics>) -> Self {
        Self {
            dynamics,
            current: None,
        }
    }

    /// Builds an env with default parameters from its id.
    pub fn by_id(env_id: &str) -> Result<Self, EnvError> {
        EnvConfig::by_id(env_id).map(|c| c.build())
    }

    pub fn cartpole(params: CartPoleBalanceParams) -> Self {
        Self::new(Box::new(CartPoleBalance::new(params)))
    }

    pub fn hopper(params: PlanarHopperParams) -> Self {
        Self::new(Box::new(PlanarHopper::new(params)))
    }

    pub fn env_id(&self) -> &'static str {
        self.dynamics.env_id()
    }

    pub fn spec(&self) -> &EnvSpec {
        self.dynamics.spec()
    }

    pub fn dynamics(&self) -> &dyn Dynamics {
        self.dynamics.as_ref()
    }

    pub fn current(&self) -> Option<&EnvState> {
        self.current.as_ref()
    }

    pub fn reset(&mut self, seed: u64) -> (Observation, EnvState) {
        let mut rng = Stream::from_seed(seed);
        let (q, qdot, phase) = self.dynamics.sample_initial(&mut rng);
        let state = EnvState {
            env_id: self.env_id().to_string(),
            q,
            qdot,
            phase,
            step_index: 0,
            rng_state: rng.to_bytes(),
        };
        let obs = self.dynamics.observe(&state);
        self.current = Some(state.clone());
        (obs, state)
    }

    pub fn restore(&mut self, state: &EnvState) -> Result<Observation, EnvError> {
        self.check_state(state)?;
        let obs = self.dynamics.observe(state);
        self.current = Some(state.clone());
        Ok(obs)
    }

    /// Steps the live state.
    pub fn step(&mut self, action: &ActionVector) -> Result<StepResult, EnvError> {
        let state = self.current.as_ref().ok_or(EnvError::NotStarted)?;
        let result = self.step_from(state, action)?;
        self.current = Some(result.state.clone());
        Ok(result)
    }

    /// Pure step from an explicit state; the live state is untouched.
    pub fn step_from(
        &self,
        state: &EnvState,
        action: &ActionVector,
    ) -> Result<StepResult, EnvError> {
        self.check_state(state)?;
        let a = action.clamped(self.spec().d_act)?;
        let t = self.dynamics.advance(state, &a);
        let next = EnvState {
            env_id: state.env_id.clone(),
            q: t.q,
            qdot: t.qdot,
            phase: t.phase,
            step_index: state.step_index + 1,
            rng_state: state.rng_state.clone(),
        };
        let terminated = !self.is_healthy(&next);
        let truncated = !terminated && next.step_index >= self.spec().l_max;
        Ok(StepResult {
            observation: self.dynamics.observe(&next),
            reward: t.reward,
            terminated,
            truncated,
            state: next,
        })
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        self.dynamics.observe(state)
    }

    pub fn is_healthy(&self, state: &EnvState) -> bool {
        self.dynamics
            .health_values(state)
            .iter()
            .zip(&self.spec().health_bounds)
            .all(|(v, b)| b.contains(*v))
    }

    fn check_state(&self, state: &EnvState) -> Result<(), EnvError> {
        if state.env_id != self.env_id() {
            return Err(EnvError::EnvMismatch {
                expected: self.env_id().to_string(),
                found: state.env_id.clone(),
            });
        }
        if state.q.len() != self.dynamics.position_dim() {
            return Err(EnvError::StateDim {
                expected: self.dynamics.position_dim(),
                found: state.q.len(),
            });
        }
        if state.qdot.len() != self.dynamics.velocity_dim() {
            return Err(EnvError::StateDim {
                expected: self.dynamics.velocity_dim(),
                found: state.qdot.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    #[test]
    fn env_config_text_round_trips() {
        let mut p = PlanarHopperParams::default();
        p.spring_k = 250.0;
        let c = EnvConfig::Hopper(p);
        let text = toml::to_string(&c).unwrap();
        assert!(text.starts_with("id = \"planar-hopper-v1\""), "{text}");
        assert_eq!(toml::from_str::<EnvConfig>(&text).unwrap(), c);
        let partial: EnvConfig =
            toml::from_str("id = \"cartpole-balance-v1\"\nforce_max = 5.0").unwrap();
        let EnvConfig::CartPole(cp) = partial else {
            panic!()
        };
        assert_eq!(cp.force_max, 5.0);
        assert!(toml::from_str::<EnvConfig>("id = \"cartpole-balance-v1\"\nbogus = 1").is_err());
    }

    use super::*;

    #[test]
    fn reset_is_deterministic_per_seed() {
        for id in [CARTPOLE_ID, HOPPER_ID] {
            let mut env = Env::by_id(id).unwrap();
            let (_, a) = env.reset(7);
            let (_, b) = env.reset(7);
            assert_eq!(a.to_bytes(), b.to_bytes());
            assert_eq!(a.step_index, 0);
        }
    }

    #[test]
    fn different_seeds_give_different_states() {
        for id in [CARTPOLE_ID, HOPPER_ID] {
            let mut env = Env::by_id(id).unwrap();
            let mut same = 0;
            for s in 0..1000u64 {
                let (_, a) = env.reset(2 * s);
                let (_, b) = env.reset(2 * s + 1);
                if a.q == b.q && a.qdot == b.qdot {
                    same += 1;
                }
            }
            assert_eq!(same, 0, "{id}");
        }
    }

    #[test]
    fn mismatched_env_is_rejected() {
        let mut cart = Env::by_id(CARTPOLE_ID).unwrap();
        let mut hop = Env::by_id(HOPPER_ID).unwrap();
        let (_, hs) = hop.reset(1);
        assert!(matches!(
            cart.restore(&hs),
            Err(EnvError::EnvMismatch { .. })
        ));
        cart.reset(1);
        assert!(matches!(
            cart.step_from(&hs, &ActionVector::zeros(1)),
            Err(EnvError::EnvMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_action_is_rejected() {
        let mut env = Env::by_id(CARTPOLE_ID).unwrap();
        env.reset(3);
        let err = env.step(&ActionVector::new(vec![f64::NAN])).unwrap_err();
        assert!(matches!(err, EnvError::NonFiniteAction { index: 0 }));
    }

    #[test]
    fn step_before_reset_fails() {
        let mut env = Env::by_id(HOPPER_ID).unwrap();
        assert!(matches!(
            env.step(&ActionVector::zeros(2)),
            Err(EnvError::NotStarted)
        ));
    }

    #[test]
    fn out_of_box_actions_are_clamped() {
        let mut env = Env::by_id(CARTPOLE_ID).unwrap();
        let (_, s) = env.reset(4);
        let a = env.step_from(&s, &ActionVector::new(vec![5.0])).unwrap();
        let b = env.step_from(&s, &ActionVector::new(vec![1.0])).unwrap();
        assert_eq!(a.observation, b.observation);
        assert_eq!(a.reward, b.reward);
    }

    #[test]
    fn restore_then_reset_gives_fresh_initial_state() {
        let mut env = Env::by_id(HOPPER_ID).unwrap();
        let (_, s0) = env.reset(10);
        let mut s = s0.clone();
        for _ in 0..20 {
            s = env.step(&ActionVector::new(vec![0.2, 0.5])).unwrap().state;
        }
        env.restore(&s).unwrap();
        let (_, fresh) = env.reset(10);
        assert_eq!(fresh, s0);
        assert_eq!(env.current(), Some(&s0));
    }

    #[test]
    fn snapshot_restore_replays_identically() {
        let mut env = Env::by_id(HOPPER_ID).unwrap();
        let mut rng = Stream::from_seed(5);
        env.reset(5);
        let mut snapshot = None;
        let mut recorded = Vec::new();
        let mut rewards = Vec::new();
        for t in 0..150 {
            if t == 50 {
                snapshot = env.current().cloned();
            }
            let a = ActionVector::new(vec![rng.uniform() * 2.0 - 1.0, rng.uniform()]);
            let r = env.step(&a).unwrap();
            if t >= 50 {
                recorded.push(a);
                rewards.push(r.reward.to_bits());
            }
            if r.terminated {
                break;
            }
        }
        let snap = snapshot.unwrap();
        let bytes = snap.to_bytes();
        let restored = EnvState::from_bytes(&bytes).unwrap();
        env.restore(&restored).unwrap();
        let replay: Vec<u64> = recorded
            .iter()
            .map(|a| env.step(a).unwrap().reward.to_bits())
            .collect();
        assert_eq!(replay, rewards);
    }

    #[test]
    fn state_bytes_follow_documented_layout() {
        let mut env = Env::by_id(CARTPOLE_ID).unwrap();
        let (_, s) = env.reset(1);
        let b = s.to_bytes();
        assert_eq!(&b[0..4], b"RGEV");
        assert_eq!(u16::from_le_bytes([b[4], b[5]]), ENV_STATE_VERSION);
        let id_len = u32::from_le_bytes(b[6..10].try_into().unwrap()) as usize;
        assert_eq!(&b[10..10 + id_len], CARTPOLE_ID.as_bytes());
        let at = 10 + id_len;
        assert_eq!(u32::from_le_bytes(b[at..at + 4].try_into().unwrap()), 4);
        assert_eq!(
            f64::from_le_bytes(b[at + 4..at + 12].try_into().unwrap()),
            s.q[0]
        );
    }

    #[test]
    fn unsupported_version_is_a_format_error() {
        let mut env = Env::by_id(CARTPOLE_ID).unwrap();
        let (_, s) = env.reset(1);
        let mut b = s.to_bytes();
        b[4] = 99;
        assert!(matches!(
            EnvState::from_bytes(&b),
            Err(EnvError::Format(CodecError::Version { found: 99, .. }))
        ));
        b[0] = b'X';
        assert!(matches!(
            EnvState::from_bytes(&b),
            Err(EnvError::Format(CodecError::BadMagic { .. }))
        ));
    }
}
