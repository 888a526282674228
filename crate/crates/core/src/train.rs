//! The off-policy training loop shared by ordinary, STA and pretrained-pool
//! training. Variants differ only in where episodes start.

use thiserror::Error;

use crate::agent::{Agent, AgentError, Mode, ReplayBuffer};
use crate::env::{ActionVector, Env, EnvError, EnvState};
use crate::rng::Stream;
use crate::trajectory::{EndCause, Trajectory};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("agent was built for {agent} but the env is {env}")]
    EnvMismatch { agent: String, env: String },
}

/// Where the next episode begins.
#[derive(Clone, Debug, PartialEq)]
pub enum Start {
    Initial,
    /// Restore this state and run for at most `horizon` steps.
    Restored {
        state: EnvState,
        horizon: u64,
    },
}

/// Chooses episode starts and observes finished episodes.
pub trait StartScheduler {
    fn next_start(&mut self, agent: &Agent, env: &Env, rng: &mut Stream) -> Start;

    fn on_step(&mut self, _env_steps: u64) {}

    fn on_episode(&mut self, _traj: &Trajectory, _agent: &Agent, _env: &Env) {}
}

/// Every episode starts from d0.
#[derive(Clone, Copy, Debug, Default)]
pub struct Ordinary;

impl StartScheduler for Ordinary {
    fn next_start(&mut self, _: &Agent, _: &Env, _: &mut Stream) -> Start {
        Start::Initial
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// Env steps completed before the episode began.
    pub start_step: u64,
    pub length: u64,
    pub total_return: f64,
    pub end: EndCause,
    pub restored: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeRecord>,
    pub env_steps: u64,
    pub updates: u64,
    pub restored_episodes: u64,
}

impl TrainingLog {
    /// Mean return over the last `n` episodes that started from d0 and ran to
    /// completion.
    pub fn recent_mean_return(&self, n: usize) -> Option<f64> {
        let rs: Vec<f64> = self
            .episodes
            .iter()
            .rev()
            .filter(|e| !e.restored && e.end != EndCause::Budget)
            .take(n)
            .map(|e| e.total_return)
            .collect();
        (!rs.is_empty()).then(|| rs.iter().sum::<f64>() / rs.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("episode,start_step,length,return,end,restored\n");
        for (i, e) in self.episodes.iter().enumerate() {
            s.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                e.start_step,
                e.length,
                e.total_return,
                e.end.name(),
                u8::from(e.restored)
            ));
        }
        s
    }
}

/// Independent random streams of one training run.
#[derive(Clone, Debug)]
pub struct TrainStreams {
    /// Seeds for d0 resets.
    pub reset: Stream,
    /// Warm-up actions and policy sampling.
    pub explore: Stream,
    /// Minibatch indices.
    pub replay: Stream,
    /// Start-state decisions; untouched by [`Ordinary`].
    pub scheduler: Stream,
}

impl TrainStreams {
    pub fn derive(master_seed: u64, run_index: u64) -> Self {
        Self {
            reset: Stream::derive(master_seed, run_index, "train/reset"),
            explore: Stream::derive(master_seed, run_index, "train/explore"),
            replay: Stream::derive(master_seed, run_index, "train/replay"),
            scheduler: Stream::derive(master_seed, run_index, "train/scheduler"),
        }
    }
}

/// Runs exactly `total_steps` environment interactions. Episodes still
/// running when the budget is spent end with [`EndCause::Budget`].
pub fn train(
    agent: &mut Agent,
    env: &mut Env,
    total_steps: u64,
    streams: &mut TrainStreams,
    scheduler: &mut dyn StartScheduler,
) -> Result<TrainingLog, TrainError> {
    let mut buffer = ReplayBuffer::new(
        agent.obs_dim(),
        agent.act_dim(),
        agent.config().replay_capacity,
    );
    train_into(agent, env, total_steps, streams, scheduler, &mut buffer)
}

fn train_into(
    agent: &mut Agent,
    env: &mut Env,
    total_steps: u64,
    streams: &mut TrainStreams,
    scheduler: &mut dyn StartScheduler,
    buffer: &mut ReplayBuffer,
) -> Result<TrainingLog, TrainError> {
    if agent.env_id() != env.env_id() {
        return Err(TrainError::EnvMismatch {
            agent: agent.env_id().into(),
            env: env.env_id().into(),
        });
    }
    let cfg = agent.config().clone();
    let act_dim = agent.act_dim();
    let mut log = TrainingLog::default();

    while log.env_steps < total_steps {
        let start = scheduler.next_start(agent, env, &mut streams.scheduler);
        let (mut obs, mut state, horizon, restored) = match start {
            Start::Initial => {
                let (obs, state) = env.reset(streams.reset.next_u64());
                (obs, state, u64::MAX, false)
            }
            Start::Restored { mut state, horizon } => {
                state.step_index = 0;
                (env.restore(&state)?, state, horizon, true)
            }
        };
        let start_step = log.env_steps;
        let mut traj = Trajectory::new();
        loop {
            if log.env_steps >= total_steps {
                traj.end = EndCause::Budget;
                break;
            }
            let action = if agent.total_env_steps() < cfg.start_steps {
                ActionVector::new(
                    (0..act_dim)
                        .map(|_| streams.explore.uniform() * 2.0 - 1.0)
                        .collect(),
                )
            } else {
                agent.act(&obs, Mode::Stochastic, &mut streams.explore)
            };
            let r = env.step(&action)?;
            log.env_steps += 1;
            agent.add_env_steps(1);
            let next = r.observation.to_f32();
            let act32: Vec<f32> = action.values.iter().map(|v| *v as f32).collect();
            buffer.push(&obs.to_f32(), &act32, r.reward as f32, &next, r.terminated);
            traj.push(state, obs, action, r.reward);
            state = r.state;
            obs = r.observation;

            let t = agent.total_env_steps();
            if t >= cfg.update_after && t % cfg.update_every == 0 {
                for _ in 0..cfg.update_every {
                    let batch = buffer.sample(cfg.batch_size, &mut streams.replay);
                    agent.update(&batch)?;
                    log.updates += 1;
                }
            }
            scheduler.on_step(log.env_steps);

            if r.terminated {
                traj.end = EndCause::Terminated;
                break;
            }
            if r.truncated {
                traj.end = EndCause::Truncated;
                break;
            }
            if traj.len() as u64 >= horizon {
                traj.end = EndCause::Horizon;
                break;
            }
        }
        if traj.is_empty() {
            break;
        }
        log.episodes.push(EpisodeRecord {
            start_step,
            length: traj.len() as u64,
            total_return: traj.total_return(),
            end: traj.end,
            restored,
        });
        log.restored_episodes += u64::from(restored);
        scheduler.on_episode(&traj, agent, env);
    }
    Ok(log)
}

/// Plain SAC/TD3 training: every episode starts from d0.
pub fn train_ordinary(
    agent: &mut Agent,
    env: &mut Env,
    total_steps: u64,
    streams: &mut TrainStreams,
) -> Result<TrainingLog, TrainError> {
    train(agent, env, total_steps, streams, &mut Ordinary)
}
