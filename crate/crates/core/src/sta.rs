//! Self-trajectory augmentation: an archive of the agent's own scored states,
//! a per-epoch qualification threshold and low-Q start selection. Also the
//! pretrained-pool baseline, which starts episodes from a fixed pool instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentError};
use crate::codec::{CodecError, Reader, Writer};
use crate::env::{Env, EnvError, EnvState, Observation};
use crate::rng::Stream;
use crate::train::{train, Start, StartScheduler, TrainError, TrainStreams, TrainingLog};
use crate::trajectory::{evaluate, EndCause, Trajectory};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"RGSA";
pub const ARCHIVE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum StaError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("archive: {0}")]
    Format(#[from] CodecError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("pool is empty")]
    EmptyPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoringMode {
    /// Sum of the next `lambda` rewards.
    NextLambdaSum,
    /// Mean reward over the rest of the trajectory.
    AverageRemaining,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaConfig {
    pub p0: f64,
    pub l_r: u64,
    pub lambda: usize,
    pub eta_sta: f64,
    pub gamma_ratio: f64,
    pub n_candidates: usize,
    pub scoring_mode: ScoringMode,
    /// Env steps between threshold updates.
    pub epoch_steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub archive_capacity: Option<usize>,
}

impl Default for StaConfig {
    fn default() -> Self {
        Self {
            p0: 0.9,
            l_r: 100,
            lambda: 50,
            eta_sta: 0.75,
            gamma_ratio: 1.6,
            n_candidates: 5,
            scoring_mode: ScoringMode::NextLambdaSum,
            epoch_steps: 10_000,
            archive_capacity: None,
        }
    }
}

impl StaConfig {
    pub fn validate(&self) -> Result<(), StaError> {
        let bad = |m: &str| Err(StaError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.p0) {
            return bad("p0 must be in [0, 1]");
        }
        if self.l_r == 0 || self.lambda == 0 || self.n_candidates == 0 || self.epoch_steps == 0 {
            return bad("l_r, lambda, n_candidates and epoch_steps must be positive");
        }
        if !(self.eta_sta > 0.0 && self.eta_sta <= 1.0) {
            return bad("eta_sta must be in (0, 1]");
        }
        if !(self.gamma_ratio >= 1.0) {
            return bad("gamma_ratio must be at least 1");
        }
        if self.archive_capacity == Some(0) {
            return bad("archive_capacity must be positive");
        }
        Ok(())
    }
}

/// Scores the states of a finished trajectory. States whose lookahead window
/// is cut by a non-failure ending are left out; states close to a failure
/// keep their short sum.
pub fn score_trajectory_states(
    rewards: &[f64],
    end: EndCause,
    lambda: usize,
    mode: ScoringMode,
) -> Vec<(usize, f64)> {
    let n = rewards.len();
    match mode {
        ScoringMode::NextLambdaSum => {
            let last = if end.is_failure() {
                n
            } else {
                (n + 1).saturating_sub(lambda)
            };
            (0..last)
                .map(|t| {
                    let hi = (t + lambda).min(n);
                    (t, rewards[t..hi].iter().sum())
                })
                .collect()
        }
        ScoringMode::AverageRemaining => {
            let mut sums = vec![0.0; n];
            let mut tail = 0.0;
            for t in (0..n).rev() {
                tail += rewards[t];
                sums[t] = tail;
            }
            sums.into_iter()
                .enumerate()
                .map(|(t, s)| (t, s / (n - t) as f64))
                .collect()
        }
    }
}

/// Qualification rule; before the first threshold exists everything passes.
pub fn is_qualified(score: f64, omega: Option<f64>) -> bool {
    omega.is_none_or(|w| score >= w)
}

/// The `ceil(eta * n)`-th largest score, or `None` for an empty set.
pub fn order_statistic(scores: &[f32], eta: f64) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((eta * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(f64::from(sorted[k - 1]))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredState {
    pub env_state: EnvState,
    pub observation: Observation,
    pub score: f32,
    pub epoch: u32,
    /// Diagnostic only.
    pub q_at_insert: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateArchive {
    pub env_id: String,
    pub entries: Vec<ScoredState>,
    pub omega: Option<f64>,
    pub omega_max: Option<f64>,
    pub latest_epoch_scores: Vec<f32>,
    pub capacity: Option<usize>,
    /// Index of the epoch now collecting scores.
    pub epoch: u32,
    /// Threshold in force during each finished or current epoch.
    pub omega_history: Vec<Option<f64>>,
    /// Entries offered for insertion; drives uniform reservoir eviction.
    pub offered: u64,
}

impl StateArchive {
    pub fn new(env_id: &str, capacity: Option<usize>) -> Self {
        Self {
            env_id: env_id.to_string(),
            entries: Vec::new(),
            omega: None,
            omega_max: None,
            latest_epoch_scores: Vec::new(),
            capacity,
            epoch: 0,
            omega_history: vec![None],
            offered: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Closes the current epoch. An epoch without scores leaves the
    /// threshold as it was.
    pub fn update_threshold(&mut self, eta_sta: f64) -> Option<f64> {
        if let Some(w) = order_statistic(&self.latest_epoch_scores, eta_sta) {
            self.omega = Some(w);
            self.omega_max = Some(self.omega_max.map_or(w, |m| m.max(w)));
        }
        self.latest_epoch_scores.clear();
        self.epoch += 1;
        self.omega_history.push(self.omega);
        self.omega
    }

    /// Appends `entry`, or with a capacity set keeps a uniform sample of
    /// everything offered.
    pub fn insert(&mut self, entry: ScoredState, rng: &mut Stream) {
        self.offered += 1;
        match self.capacity {
            Some(cap) if self.entries.len() >= cap => {
                let j = (rng.next_u64() % self.offered) as usize;
                if j < cap {
                    self.entries[j] = entry;
                }
            }
            _ => self.entries.push(entry),
        }
    }

    pub fn is_eligible(&self, score: f32, gamma_ratio: f64) -> bool {
        self.omega_max
            .is_none_or(|m| f64::from(score) * gamma_ratio >= m)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(ARCHIVE_MAGIC);
        w.u16(ARCHIVE_VERSION);
        w.str(&self.env_id);
        w.u64(self.entries.len() as u64);
        for e in &self.entries {
            w.blob(&e.env_state.to_bytes());
            w.f32(e.score);
            w.u32(e.epoch);
            w.f32(e.q_at_insert);
        }
        w.into_inner()
    }

    /// Reads a pool file. Threshold bookkeeping is not stored, so the result
    /// has no threshold.
    pub fn decode(bytes: &[u8]) -> Result<Self, StaError> {
        let mut r = Reader::new(bytes);
        r.magic(ARCHIVE_MAGIC)?;
        let version = r.u16()?;
        if version != ARCHIVE_VERSION {
            return Err(CodecError::Version {
                what: "archive",
                found: version,
                supported: ARCHIVE_VERSION,
            }
            .into());
        }
        let env_id = r.str()?;
        let env = Env::by_id(&env_id)?;
        let n = r.u64()?;
        let mut archive = Self::new(&env_id, None);
        for _ in 0..n {
            let env_state = EnvState::from_bytes(r.blob()?)?;
            if env_state.env_id != env_id {
                return Err(
                    CodecError::Malformed("entry env id differs from archive".into()).into(),
                );
            }
            let score = r.f32()?;
            let epoch = r.u32()?;
            let q_at_insert = r.f32()?;
            let observation = env.observe(&env_state);
            archive.entries.push(ScoredState {
                env_state,
                observation,
                score,
                epoch,
                q_at_insert,
            });
        }
        r.finish()?;
        archive.offered = n;
        Ok(archive)
    }

    /// One row per entry: epoch, score, q, observation components.
    pub fn to_csv(&self) -> Result<String, StaError> {
        let d_obs = Env::by_id(&self.env_id)?.spec().d_obs;
        let mut s = String::from("epoch,score,q");
        for i in 0..d_obs {
            s.push_str(&format!(",o{i}"));
        }
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!("{},{},{}", e.epoch, e.score, e.q_at_insert));
            for v in &e.observation.values {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Selection {
    Chosen {
        index: usize,
        /// Sampled archive indices and their `Q(s, pi(s))`, in draw order.
        candidates: Vec<(usize, f32)>,
    },
    /// Nothing eligible; start from d0.
    Fallback,
}

/// Draws up to `n_candidates` distinct eligible entries and picks the one the
/// agent values lowest.
pub fn select_start_state(
    archive: &StateArchive,
    agent: &Agent,
    n_candidates: usize,
    gamma_ratio: f64,
    rng: &mut Stream,
) -> Selection {
    if archive.is_empty() {
        return Selection::Fallback;
    }
    let n = archive.len();
    let mut picked: Vec<usize> = Vec::with_capacity(n_candidates);
    for _ in 0..50 * n_candidates {
        if picked.len() == n_candidates {
            break;
        }
        let i = rng.below(n);
        if archive.is_eligible(archive.entries[i].score, gamma_ratio) && !picked.contains(&i) {
            picked.push(i);
        }
    }
    if picked.len() < n_candidates {
        let eligible: Vec<usize> = (0..n)
            .filter(|i| archive.is_eligible(archive.entries[*i].score, gamma_ratio))
            .collect();
        if eligible.len() <= n_candidates {
            picked = eligible;
        } else if picked.is_empty() {
            picked.push(eligible[rng.below(eligible.len())]);
        }
    }
    if picked.is_empty() {
        return Selection::Fallback;
    }
    if picked.len() == 1 {
        return Selection::Chosen {
            index: picked[0],
            candidates: vec![(picked[0], f32::NAN)],
        };
    }
    let obs: Vec<f32> = picked
        .iter()
        .flat_map(|i| archive.entries[*i].observation.to_f32())
        .collect();
    let q = agent.q_at_policy(&obs, picked.len());
    let candidates: Vec<(usize, f32)> = picked.into_iter().zip(q).collect();
    let mut best = 0;
    for (j, c) in candidates.iter().enumerate() {
        if c.1 < candidates[best].1 {
            best = j;
        }
    }
    Selection::Chosen {
        index: candidates[best].0,
        candidates,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StaStats {
    pub archive_starts: u64,
    pub fallbacks: u64,
    pub initial_starts: u64,
}

/// Episode-start scheduler implementing STA.
#[derive(Clone, Debug)]
pub struct StaScheduler {
    pub config: StaConfig,
    pub archive: StateArchive,
    pub stats: StaStats,
    next_epoch_at: u64,
    insert_rng: Stream,
}

impl StaScheduler {
    pub fn new(config: StaConfig, env_id: &str, insert_rng: Stream) -> Result<Self, StaError> {
        config.validate()?;
        Ok(Self {
            archive: StateArchive::new(env_id, config.archive_capacity),
            next_epoch_at: config.epoch_steps,
            stats: StaStats::default(),
            insert_rng,
            config,
        })
    }
}

impl StartScheduler for StaScheduler {
    fn next_start(&mut self, agent: &Agent, _env: &Env, rng: &mut Stream) -> Start {
        let x = rng.uniform();
        if x > self.config.p0 {
            self.stats.initial_starts += 1;
            return Start::Initial;
        }
        let c = &self.config;
        match select_start_state(&self.archive, agent, c.n_candidates, c.gamma_ratio, rng) {
            Selection::Chosen { index, .. } => {
                self.stats.archive_starts += 1;
                Start::Restored {
                    state: self.archive.entries[index].env_state.clone(),
                    horizon: c.l_r,
                }
            }
            Selection::Fallback => {
                self.stats.fallbacks += 1;
                Start::Initial
            }
        }
    }

    fn on_step(&mut self, env_steps: u64) {
        if env_steps >= self.next_epoch_at {
            self.archive.update_threshold(self.config.eta_sta);
            self.next_epoch_at += self.config.epoch_steps;
        }
    }

    fn on_episode(&mut self, traj: &Trajectory, agent: &Agent, _env: &Env) {
        let scored = score_trajectory_states(
            &traj.rewards,
            traj.end,
            self.config.lambda,
            self.config.scoring_mode,
        );
        let omega = self.archive.omega;
        let mut keep = Vec::new();
        for (t, score) in scored {
            let score = score as f32;
            self.archive.latest_epoch_scores.push(score);
            if is_qualified(f64::from(score), omega) {
                keep.push((t, score));
            }
        }
        if keep.is_empty() {
            return;
        }
        let obs: Vec<f32> = keep
            .iter()
            .flat_map(|(t, _)| traj.observations[*t].to_f32())
            .collect();
        let q = agent.q_at_policy(&obs, keep.len());
        for ((t, score), q) in keep.into_iter().zip(q) {
            let entry = ScoredState {
                env_state: traj.states[t].clone(),
                observation: traj.observations[t].clone(),
                score,
                epoch: self.archive.epoch,
                q_at_insert: q,
            };
            self.archive.insert(entry, &mut self.insert_rng);
        }
    }
}

pub struct StaRun {
    pub log: TrainingLog,
    pub archive: StateArchive,
    pub stats: StaStats,
}

pub fn sta_train(
    agent: &mut Agent,
    env: &mut Env,
    total_steps: u64,
    config: &StaConfig,
    streams: &mut TrainStreams,
) -> Result<StaRun, StaError> {
    let insert_rng = streams.scheduler.split("sta/insert");
    let mut sched = StaScheduler::new(config.clone(), env.env_id(), insert_rng)?;
    let log = train(agent, env, total_steps, streams, &mut sched)?;
    Ok(StaRun {
        log,
        archive: sched.archive,
        stats: sched.stats,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaiveConfig {
    pub n_pretrained: usize,
    pub eta_naive: f64,
    pub p0: f64,
    pub l_r: u64,
    /// Evaluation trajectories per pretrained agent when building the pool.
    pub m_trajs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_path: Option<String>,
}

impl Default for NaiveConfig {
    fn default() -> Self {
        Self {
            n_pretrained: 4,
            eta_naive: 0.75,
            p0: 0.9,
            l_r: 100,
            m_trajs: 20,
            pool_path: None,
        }
    }
}

/// Episode starts drawn uniformly from a fixed pool.
#[derive(Clone, Debug)]
pub struct PoolScheduler {
    pub pool: StateArchive,
    pub p0: f64,
    pub l_r: u64,
    pub stats: StaStats,
}

impl StartScheduler for PoolScheduler {
    fn next_start(&mut self, _agent: &Agent, _env: &Env, rng: &mut Stream) -> Start {
        let x = rng.uniform();
        if x > self.p0 || self.pool.is_empty() {
            self.stats.initial_starts += 1;
            return Start::Initial;
        }
        self.stats.archive_starts += 1;
        let i = rng.below(self.pool.len());
        Start::Restored {
            state: self.pool.entries[i].env_state.clone(),
            horizon: self.l_r,
        }
    }
}

pub fn naive_train(
    agent: &mut Agent,
    env: &mut Env,
    total_steps: u64,
    pool: StateArchive,
    config: &NaiveConfig,
    streams: &mut TrainStreams,
) -> Result<(TrainingLog, StaStats), StaError> {
    if config.p0 > 0.0 && pool.is_empty() {
        return Err(StaError::EmptyPool);
    }
    let mut sched = PoolScheduler {
        pool,
        p0: config.p0,
        l_r: config.l_r,
        stats: StaStats::default(),
    };
    let log = train(agent, env, total_steps, streams, &mut sched)?;
    Ok((log, sched.stats))
}

/// Indices of the `ceil(eta * n)` highest returns, best first; ties keep
/// the earlier trajectory.
pub fn top_fraction(returns: &[f64], eta: f64) -> Vec<usize> {
    let keep = ((eta * returns.len() as f64).ceil() as usize).min(returns.len());
    let mut idx: Vec<usize> = (0..returns.len()).collect();
    idx.sort_by(|a, b| returns[*b].total_cmp(&returns[*a]).then(a.cmp(b)));
    idx.truncate(keep);
    idx
}

/// Pools every state of each agent's best deterministic trajectories from
/// d0. Agents that failed to load are reported and skipped.
pub fn build_pretrained_pool(
    agents: &[Result<Agent, AgentError>],
    env: &mut Env,
    m_trajs: usize,
    eta_naive: f64,
    rng: &mut Stream,
) -> (StateArchive, Vec<(usize, String)>) {
    let mut pool = StateArchive::new(env.env_id(), None);
    let mut errors = Vec::new();
    for (k, agent) in agents.iter().enumerate() {
        let agent = match agent {
            Ok(a) => a,
            Err(e) => {
                errors.push((k, e.to_string()));
                continue;
            }
        };
        let seeds: Vec<u64> = (0..m_trajs).map(|_| rng.next_u64()).collect();
        let trajs = match evaluate(agent, env, &seeds) {
            Ok(t) => t,
            Err(e) => {
                errors.push((k, e.to_string()));
                continue;
            }
        };
        let returns: Vec<f64> = trajs.iter().map(Trajectory::total_return).collect();
        for i in top_fraction(&returns, eta_naive) {
            append_trajectory(&mut pool, &trajs[i]);
        }
    }
    pool.offered = pool.entries.len() as u64;
    (pool, errors)
}

fn append_trajectory(pool: &mut StateArchive, traj: &Trajectory) {
    let scores = score_trajectory_states(
        &traj.rewards,
        EndCause::Terminated,
        50,
        ScoringMode::NextLambdaSum,
    );
    for (t, score) in scores {
        pool.entries.push(ScoredState {
            env_state: traj.states[t].clone(),
            observation: traj.observations[t].clone(),
            score: score as f32,
            epoch: 0,
            q_at_insert: 0.0,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rewards_score_lambda() {
        let r = vec![1.0; 120];
        let s = score_trajectory_states(&r, EndCause::Truncated, 50, ScoringMode::NextLambdaSum);
        assert_eq!(s.len(), 71);
        assert!(s.iter().all(|(_, v)| *v == 50.0));
        assert_eq!(s.last().unwrap().0, 70);
    }

    #[test]
    fn failure_keeps_partial_sums() {
        let r = vec![1.0; 30];
        let s = score_trajectory_states(&r, EndCause::Terminated, 50, ScoringMode::NextLambdaSum);
        assert_eq!(s.len(), 30);
        assert_eq!(s[20], (20, 10.0));
        assert_eq!(s[29], (29, 1.0));
    }

    #[test]
    fn average_remaining_mode() {
        let r = [1.0, 2.0, 3.0, 6.0];
        let s = score_trajectory_states(&r, EndCause::Truncated, 50, ScoringMode::AverageRemaining);
        assert_eq!(s, vec![(0, 3.0), (1, 11.0 / 3.0), (2, 4.5), (3, 6.0)]);
        assert!(score_trajectory_states(
            &[],
            EndCause::Truncated,
            50,
            ScoringMode::AverageRemaining
        )
        .is_empty());
        assert!(
            score_trajectory_states(&[], EndCause::Terminated, 50, ScoringMode::NextLambdaSum)
                .is_empty()
        );
    }

    #[test]
    fn threshold_order_statistic() {
        let mut a = StateArchive::new("cartpole-balance-v1", None);
        a.latest_epoch_scores = vec![4.0, 3.0, 2.0, 1.0];
        assert_eq!(a.update_threshold(0.75), Some(2.0));
        assert_eq!(a.omega_max, Some(2.0));
        assert!(a.latest_epoch_scores.is_empty());
        a.latest_epoch_scores = vec![1.5, 0.5];
        assert_eq!(a.update_threshold(1.0), Some(0.5));
        assert_eq!(a.omega_max, Some(2.0));
        assert_eq!(a.update_threshold(1.0), Some(0.5));
        assert_eq!(a.omega_history, vec![None, Some(2.0), Some(0.5), Some(0.5)]);
    }

    #[test]
    fn qualification_boundary() {
        assert!(is_qualified(2.0, Some(2.0)));
        assert!(!is_qualified(2.0 - 1e-9, Some(2.0)));
        assert!(is_qualified(-1e9, None));
    }

    #[test]
    fn top_fraction_selection() {
        assert_eq!(top_fraction(&[4.0, 3.0, 2.0, 1.0], 0.75), vec![0, 1, 2]);
        assert_eq!(top_fraction(&[1.0, 5.0, 5.0], 0.5), vec![1, 2]);
    }

    #[test]
    fn reservoir_respects_capacity() {
        let mut a = StateArchive::new("cartpole-balance-v1", Some(10));
        let env = Env::by_id("cartpole-balance-v1").unwrap();
        let mut e = Env::by_id("cartpole-balance-v1").unwrap();
        let (_, s) = e.reset(1);
        let mut rng = Stream::from_seed(1);
        for i in 0..100 {
            a.insert(
                ScoredState {
                    env_state: s.clone(),
                    observation: env.observe(&s),
                    score: i as f32,
                    epoch: 0,
                    q_at_insert: 0.0,
                },
                &mut rng,
            );
        }
        assert_eq!(a.len(), 10);
        assert_eq!(a.offered, 100);
    }
}
