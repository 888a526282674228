//! Recorded rollouts and deterministic policy evaluation.

use crate::agent::{Agent, Mode};
use crate::env::{ActionVector, Env, EnvError, EnvState, Observation};
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EndCause {
    /// A health bound was violated.
    Terminated,
    /// The environment's own time limit.
    Truncated,
    /// A caller-imposed horizon shorter than the time limit.
    Horizon,
    /// The training budget ran out mid-episode.
    Budget,
}

impl EndCause {
    pub fn name(self) -> &'static str {
        match self {
            EndCause::Terminated => "terminated",
            EndCause::Truncated => "truncated",
            EndCause::Horizon => "horizon",
            EndCause::Budget => "budget",
        }
    }

    pub fn is_failure(self) -> bool {
        self == EndCause::Terminated
    }
}

/// `states[t]` is the state the agent acted in at step `t` and `rewards[t]`
/// the reward it got for it, so `len()` is the number of steps taken.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<EnvState>,
    pub observations: Vec<Observation>,
    pub actions: Vec<ActionVector>,
    pub rewards: Vec<f64>,
    pub end: EndCause,
}

impl Trajectory {
    pub fn new() -> Self {
        Self {
            states: Vec::new(),
            observations: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            end: EndCause::Budget,
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn push(&mut self, state: EnvState, obs: Observation, action: ActionVector, reward: f64) {
        self.states.push(state);
        self.observations.push(obs);
        self.actions.push(action);
        self.rewards.push(reward);
    }
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::new()
    }
}

/// Runs `agent` from `start` for at most `horizon` steps.
pub fn rollout(
    agent: &Agent,
    env: &mut Env,
    start: &EnvState,
    horizon: u64,
    mode: Mode,
    rng: &mut Stream,
) -> Result<Trajectory, EnvError> {
    let mut obs = env.restore(start)?;
    let mut state = start.clone();
    let mut traj = Trajectory::new();
    traj.end = EndCause::Horizon;
    for _ in 0..horizon {
        let action = agent.act(&obs, mode, rng);
        let r = env.step(&action)?;
        traj.push(state, obs, action, r.reward);
        state = r.state;
        obs = r.observation;
        if r.terminated {
            traj.end = EndCause::Terminated;
            break;
        }
        if r.truncated {
            traj.end = EndCause::Truncated;
            break;
        }
    }
    Ok(traj)
}

/// Ordinary evaluation: deterministic-policy episodes from d0, one per seed.
pub fn evaluate(agent: &Agent, env: &mut Env, seeds: &[u64]) -> Result<Vec<Trajectory>, EnvError> {
    let mut unused = Stream::from_seed(0);
    seeds
        .iter()
        .map(|seed| {
            let (_, s0) = env.reset(*seed);
            rollout(agent, env, &s0, u64::MAX, Mode::Deterministic, &mut unused)
        })
        .collect()
}
