//! Relay evaluation: start a test agent from mid-trajectory states of a
//! stranger agent's best trajectories and check whether it keeps going for
//! `horizon` steps.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, Algorithm, Mode};
use crate::env::{Env, EnvConfig, EnvError, EnvState, Observation};
use crate::rng::Stream;
use crate::sta::top_fraction;
use crate::trajectory::{evaluate, rollout, EndCause, Trajectory};

#[derive(Debug, Error)]
pub enum RelayError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("no outcomes to aggregate")]
    Empty,
    #[error("agent {id} is for {found}, expected {expected}")]
    EnvMismatch {
        id: String,
        expected: String,
        found: String,
    },
    #[error("invalid relay config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FailureMode {
    /// Failure is a health termination before the horizon.
    SimulatorTermination,
    /// Failure is a horizon return below `threshold`. Neither toy env can
    /// step past a termination, so a terminated rollout keeps the return it
    /// had collected.
    ReturnBelow { threshold: f64 },
}

impl FailureMode {
    pub fn label(&self) -> String {
        match self {
            FailureMode::SimulatorTermination => "simulator-termination".into(),
            FailureMode::ReturnBelow { threshold } => format!("return-below-{threshold}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelayConfig {
    pub m_trajs: usize,
    pub eta: f64,
    pub k_per_traj: usize,
    pub horizon: u64,
    pub failure_mode: FailureMode,
    pub sample_without_replacement: bool,
    /// Optional absolute floor on kept trajectories' returns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub return_floor: Option<f64>,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            m_trajs: 200,
            eta: 0.5,
            k_per_traj: 5,
            horizon: 500,
            failure_mode: FailureMode::SimulatorTermination,
            sample_without_replacement: true,
            return_floor: None,
        }
    }
}

impl RelayConfig {
    pub fn validate(&self) -> Result<(), RelayError> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(RelayError::Config("eta must be in (0, 1]".into()));
        }
        if self.k_per_traj == 0 || self.horizon == 0 || self.m_trajs == 0 {
            return Err(RelayError::Config(
                "m_trajs, k_per_traj and horizon must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllableState {
    pub env_state: EnvState,
    pub observation: Observation,
    pub source_agent: String,
    pub source_traj: usize,
    pub t_index: usize,
    /// What the stranger collected over the next `horizon` steps.
    pub stranger_remaining_return: f64,
}

/// Steps usable for harvesting. A terminated trajectory loses its final,
/// failing step, so a harvested state's reference continuation never fails.
pub fn usable_length(traj: &Trajectory) -> usize {
    if traj.end == EndCause::Terminated {
        traj.len().saturating_sub(1)
    } else {
        traj.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HarvestPlan {
    /// Trajectory indices kept by return, best first.
    pub kept: Vec<usize>,
    /// `(trajectory, t)` pairs, `1 <= t <= T - horizon`.
    pub picks: Vec<(usize, usize)>,
    /// Kept trajectories too short to offer any state.
    pub skipped: Vec<usize>,
}

/// Selection arithmetic of harvesting, separated from simulation. `lengths`
/// are usable lengths `T`.
pub fn plan_harvest(
    lengths: &[usize],
    returns: &[f64],
    cfg: &RelayConfig,
    rng: &mut Stream,
) -> HarvestPlan {
    let mut kept = top_fraction(returns, cfg.eta);
    if let Some(floor) = cfg.return_floor {
        kept.retain(|i| returns[*i] >= floor);
    }
    let horizon = cfg.horizon as usize;
    let mut plan = HarvestPlan {
        kept: kept.clone(),
        ..HarvestPlan::default()
    };
    for i in kept {
        let t_len = lengths[i];
        if t_len <= horizon {
            plan.skipped.push(i);
            continue;
        }
        let range = t_len - horizon;
        if cfg.sample_without_replacement {
            // partial Fisher-Yates over 1..=range
            let take = cfg.k_per_traj.min(range);
            let mut pool: Vec<usize> = (1..=range).collect();
            for j in 0..take {
                let k = j + rng.below(range - j);
                pool.swap(j, k);
                plan.picks.push((i, pool[j]));
            }
        } else {
            for _ in 0..cfg.k_per_traj {
                plan.picks.push((i, 1 + rng.below(range)));
            }
        }
    }
    plan
}

#[derive(Clone, Debug, PartialEq)]
pub struct Harvest {
    pub stranger_id: String,
    pub algorithm: Algorithm,
    pub states: Vec<ControllableState>,
    pub kept_trajs: usize,
    pub skipped_trajs: usize,
    /// Returns of all `m_trajs` deterministic trajectories from d0.
    pub ordinary_returns: Vec<f64>,
}

pub fn harvest_controllable_states(
    stranger: &Agent,
    stranger_id: &str,
    env: &mut Env,
    cfg: &RelayConfig,
    rng: &mut Stream,
) -> Result<Harvest, RelayError> {
    cfg.validate()?;
    check_env(stranger, stranger_id, env)?;
    let seeds: Vec<u64> = (0..cfg.m_trajs).map(|_| rng.next_u64()).collect();
    let trajs = evaluate(stranger, env, &seeds)?;
    let lengths: Vec<usize> = trajs.iter().map(usable_length).collect();
    let returns: Vec<f64> = trajs.iter().map(Trajectory::total_return).collect();
    let plan = plan_harvest(&lengths, &returns, cfg, rng);
    if !plan.skipped.is_empty() {
        warn!(
            "{stranger_id}: {} kept trajectories shorter than horizon + 1 were skipped",
            plan.skipped.len()
        );
    }
    let h = cfg.horizon as usize;
    let states = plan
        .picks
        .iter()
        .map(|&(i, t)| ControllableState {
            env_state: trajs[i].states[t].clone(),
            observation: trajs[i].observations[t].clone(),
            source_agent: stranger_id.to_string(),
            source_traj: i,
            t_index: t,
            stranger_remaining_return: trajs[i].rewards[t..t + h].iter().sum(),
        })
        .collect();
    Ok(Harvest {
        stranger_id: stranger_id.to_string(),
        algorithm: stranger.algorithm(),
        states,
        kept_trajs: plan.kept.len(),
        skipped_trajs: plan.skipped.len(),
        ordinary_returns: returns,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelayOutcome {
    /// Index into the harvested state list.
    pub state_index: usize,
    pub failed: bool,
    pub terminated: bool,
    pub steps_survived: u64,
    pub test_return: f64,
    /// Test agent's `Q(s, pi(s))` at the takeover state.
    pub q_at_takeover: f32,
}

pub fn relay_rollout(
    test: &Agent,
    env: &mut Env,
    state: &ControllableState,
    state_index: usize,
    cfg: &RelayConfig,
) -> Result<RelayOutcome, RelayError> {
    let mut unused = Stream::from_seed(0);
    let traj = rollout(
        test,
        env,
        &state.env_state,
        cfg.horizon,
        Mode::Deterministic,
        &mut unused,
    )?;
    let terminated = traj.end == EndCause::Terminated;
    let test_return = traj.total_return();
    let failed = match cfg.failure_mode {
        FailureMode::SimulatorTermination => terminated,
        FailureMode::ReturnBelow { threshold } => test_return < threshold,
    };
    let q_at_takeover = test.q_at_policy(&state.observation.to_f32(), 1)[0];
    Ok(RelayOutcome {
        state_index,
        failed,
        terminated,
        steps_survived: traj.len() as u64,
        test_return,
        q_at_takeover,
    })
}

/// Mean and population standard deviation; `(0, 0)` for no data.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelayReport {
    pub test_id: String,
    pub stranger_id: String,
    pub test_algo: Algorithm,
    pub stranger_algo: Algorithm,
    pub n_states: usize,
    pub failure_rate: f64,
    /// Across states.
    pub failure_std: f64,
    pub mean_return: f64,
    pub return_std: f64,
    /// The stranger's own failure rate on these states, when known.
    pub reference_rate: Option<f64>,
    pub outcomes: Vec<RelayOutcome>,
}

pub fn aggregate(
    test_id: &str,
    test_algo: Algorithm,
    harvest: &Harvest,
    outcomes: Vec<RelayOutcome>,
) -> Result<RelayReport, RelayError> {
    if outcomes.is_empty() {
        return Err(RelayError::Empty);
    }
    let fails: Vec<f64> = outcomes
        .iter()
        .map(|o| f64::from(u8::from(o.failed)))
        .collect();
    let rets: Vec<f64> = outcomes.iter().map(|o| o.test_return).collect();
    let (failure_rate, failure_std) = mean_std(&fails);
    let (mean_return, return_std) = mean_std(&rets);
    Ok(RelayReport {
        test_id: test_id.to_string(),
        stranger_id: harvest.stranger_id.clone(),
        test_algo,
        stranger_algo: harvest.algorithm,
        n_states: outcomes.len(),
        failure_rate,
        failure_std,
        mean_return,
        return_std,
        reference_rate: None,
        outcomes,
    })
}

/// Runs one test agent on every harvested state of one stranger.
pub fn evaluate_cell(
    test: &Agent,
    test_id: &str,
    env: &mut Env,
    harvest: &Harvest,
    cfg: &RelayConfig,
) -> Result<RelayReport, RelayError> {
    check_env(test, test_id, env)?;
    let outcomes = harvest
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| relay_rollout(test, env, s, i, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate(test_id, test.algorithm(), harvest, outcomes)
}

fn check_env(agent: &Agent, id: &str, env: &Env) -> Result<(), RelayError> {
    if agent.env_id() != env.env_id() {
        return Err(RelayError::EnvMismatch {
            id: id.to_string(),
            expected: env.env_id().to_string(),
            found: agent.env_id().to_string(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PartitionStats {
    pub n: usize,
    pub q: (f64, f64),
    pub stranger_return: (f64, f64),
    pub test_return: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QAnalysis {
    pub failed: PartitionStats,
    pub succeeded: PartitionStats,
    /// `Q(s, pi(s))` over the test agent's own harvested states.
    pub own_state_q: (f64, f64),
    /// Raw per-outcome values for resampling: `(q, failed)`.
    pub samples: Vec<(f64, bool)>,
}

pub fn q_failure_analysis(
    test: &Agent,
    outcomes: &[(RelayOutcome, f64)],
    own_states: &[ControllableState],
) -> QAnalysis {
    let part = |want: bool| {
        let sel: Vec<&(RelayOutcome, f64)> =
            outcomes.iter().filter(|(o, _)| o.failed == want).collect();
        PartitionStats {
            n: sel.len(),
            q: mean_std(
                &sel.iter()
                    .map(|(o, _)| f64::from(o.q_at_takeover))
                    .collect::<Vec<_>>(),
            ),
            stranger_return: mean_std(&sel.iter().map(|(_, r)| *r).collect::<Vec<_>>()),
            test_return: mean_std(&sel.iter().map(|(o, _)| o.test_return).collect::<Vec<_>>()),
        }
    };
    let own_q: Vec<f64> = if own_states.is_empty() {
        Vec::new()
    } else {
        let obs: Vec<f32> = own_states
            .iter()
            .flat_map(|s| s.observation.to_f32())
            .collect();
        test.q_at_policy(&obs, own_states.len())
            .into_iter()
            .map(f64::from)
            .collect()
    };
    QAnalysis {
        failed: part(true),
        succeeded: part(false),
        own_state_q: mean_std(&own_q),
        samples: outcomes
            .iter()
            .map(|(o, _)| (f64::from(o.q_at_takeover), o.failed))
            .collect(),
    }
}

/// Percentile bootstrap interval for `mean(a) - mean(b)`.
pub fn bootstrap_mean_diff(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    level: f64,
    rng: &mut Stream,
) -> (f64, f64) {
    let mut diffs = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let ma = (0..a.len()).map(|_| a[rng.below(a.len())]).sum::<f64>() / a.len() as f64;
        let mb = (0..b.len()).map(|_| b[rng.below(b.len())]).sum::<f64>() / b.len() as f64;
        diffs.push(ma - mb);
    }
    diffs.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let lo = ((tail * resamples as f64).floor() as usize).min(resamples - 1);
    let hi = (((1.0 - tail) * resamples as f64).ceil() as usize).clamp(1, resamples) - 1;
    (diffs[lo], diffs[hi])
}

/// Stream used to harvest a given stranger; depends only on the seed and id.
pub fn harvest_stream(seed: u64, stranger_id: &str) -> Stream {
    Stream::derive(seed, 0, &format!("relay/harvest/{stranger_id}"))
}

#[derive(Clone, Debug)]
pub struct MatrixCell {
    pub test: usize,
    pub stranger: usize,
    pub result: Result<RelayReport, String>,
}

#[derive(Clone, Debug)]
pub struct RelayMatrix {
    pub test_ids: Vec<String>,
    pub stranger_ids: Vec<String>,
    pub harvests: Vec<Result<Harvest, String>>,
    pub cells: Vec<MatrixCell>,
}

/// Evaluates every test agent on every stranger's harvested states. Cells
/// whose ids match are the reference diagonal. `harvests` may be supplied
/// from a cache; missing ones are computed.
pub fn relay_matrix(
    tests: &[(String, Agent)],
    strangers: &[(String, Agent)],
    env: &EnvConfig,
    cfg: &RelayConfig,
    seed: u64,
    cached: Option<Vec<Result<Harvest, String>>>,
    jobs: usize,
) -> Result<RelayMatrix, RelayError> {
    cfg.validate()?;
    let harvests: Vec<Result<Harvest, String>> = match cached {
        Some(h) => h,
        None => par_map(strangers, jobs, |(id, agent)| {
            harvest_controllable_states(
                agent,
                id,
                &mut env.build(),
                cfg,
                &mut harvest_stream(seed, id),
            )
            .map_err(|e| e.to_string())
        }),
    };
    let pairs: Vec<(usize, usize)> = (0..tests.len())
        .flat_map(|t| (0..strangers.len()).map(move |s| (t, s)))
        .collect();
    let results = par_map(&pairs, jobs, |&(t, s)| -> Result<RelayReport, String> {
        let harvest = harvests[s]
            .as_ref()
            .map_err(|e| format!("harvest failed: {e}"))?;
        let (id, agent) = &tests[t];
        evaluate_cell(agent, id, &mut env.build(), harvest, cfg).map_err(|e| e.to_string())
    });
    let mut cells: Vec<MatrixCell> = pairs
        .into_iter()
        .zip(results)
        .map(|((test, stranger), result)| MatrixCell {
            test,
            stranger,
            result,
        })
        .collect();
    // the diagonal supplies each stranger's reference rate
    let mut reference: BTreeMap<usize, f64> = BTreeMap::new();
    for c in &cells {
        if let Ok(r) = &c.result {
            if tests[c.test].0 == strangers[c.stranger].0 {
                reference.insert(c.stranger, r.failure_rate);
            }
        }
    }
    for c in &mut cells {
        if let Ok(r) = &mut c.result {
            r.reference_rate = reference.get(&c.stranger).copied();
        }
    }
    Ok(RelayMatrix {
        test_ids: tests.iter().map(|t| t.0.clone()).collect(),
        stranger_ids: strangers.iter().map(|s| s.0.clone()).collect(),
        harvests,
        cells,
    })
}

/// Order-preserving parallel map on a pool of `jobs` threads.
pub fn par_map<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> R + Sync + Send,
) -> Vec<R> {
    use rayon::prelude::*;
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    pool.install(|| items.par_iter().map(f).collect())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupSummary {
    pub test_algo: Option<Algorithm>,
    pub stranger_algo: Option<Algorithm>,
    pub cells: usize,
    /// Mean and std of per-cell failure rates (across agent pairs).
    pub failure_rate: (f64, f64),
    /// Std of the failure indicator pooled over all states.
    pub failure_state_std: f64,
    pub mean_return: (f64, f64),
    /// Mean and std of the diagonal cells' rates.
    pub reference_rate: Option<(f64, f64)>,
}

impl RelayMatrix {
    pub fn is_diagonal(&self, c: &MatrixCell) -> bool {
        self.test_ids[c.test] == self.stranger_ids[c.stranger]
    }

    pub fn reports(&self) -> impl Iterator<Item = (&MatrixCell, &RelayReport)> {
        self.cells
            .iter()
            .filter_map(|c| c.result.as_ref().ok().map(|r| (c, r)))
    }

    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.result.is_err()).count()
    }

    /// Off-diagonal cells grouped by (test, stranger) algorithm.
    pub fn groups(&self) -> Vec<GroupSummary> {
        let mut by: BTreeMap<(Algorithm, Algorithm), Vec<&RelayReport>> = BTreeMap::new();
        let mut diag: BTreeMap<Algorithm, Vec<f64>> = BTreeMap::new();
        for (c, r) in self.reports() {
            if self.is_diagonal(c) {
                diag.entry(r.stranger_algo)
                    .or_default()
                    .push(r.failure_rate);
            } else {
                by.entry((r.test_algo, r.stranger_algo))
                    .or_default()
                    .push(r);
            }
        }
        by.into_iter()
            .map(|((t, s), rs)| {
                let mut g = summarize(&rs);
                g.test_algo = Some(t);
                g.stranger_algo = Some(s);
                g.reference_rate = diag.get(&s).map(|v| mean_std(v));
                g
            })
            .collect()
    }

    /// Summary over all off-diagonal cells plus the diagonal reference.
    pub fn overall(&self) -> GroupSummary {
        let off: Vec<&RelayReport> = self
            .reports()
            .filter(|(c, _)| !self.is_diagonal(c))
            .map(|x| x.1)
            .collect();
        let diag: Vec<f64> = self
            .reports()
            .filter(|(c, _)| self.is_diagonal(c))
            .map(|(_, r)| r.failure_rate)
            .collect();
        let mut g = summarize(&off);
        g.reference_rate = (!diag.is_empty()).then(|| mean_std(&diag));
        g
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "test_id,stranger_id,test_algo,stranger_algo,n_states,failure_rate,failure_std,mean_return,return_std,reference_rate\n",
        );
        for c in &self.cells {
            let (t, st) = (&self.test_ids[c.test], &self.stranger_ids[c.stranger]);
            match &c.result {
                Ok(r) => s.push_str(&format!(
                    "{t},{st},{},{},{},{},{},{},{},{}\n",
                    r.test_algo,
                    r.stranger_algo,
                    r.n_states,
                    r.failure_rate,
                    r.failure_std,
                    r.mean_return,
                    r.return_std,
                    r.reference_rate.map_or(String::new(), |v| v.to_string())
                )),
                Err(_) => s.push_str(&format!("{t},{st},,,0,,,,,\n")),
            }
        }
        s
    }

    pub fn per_state_csv(&self) -> String {
        let mut s = String::from(
            "test_id,stranger_id,state_id,t_index,failed,steps_survived,q_at_takeover,stranger_remaining_return,test_return\n",
        );
        for (c, r) in self.reports() {
            let Ok(h) = &self.harvests[c.stranger] else {
                continue;
            };
            for o in &r.outcomes {
                let st = &h.states[o.state_index];
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    self.test_ids[c.test],
                    self.stranger_ids[c.stranger],
                    o.state_index,
                    st.t_index,
                    u8::from(o.failed),
                    o.steps_survived,
                    o.q_at_takeover,
                    st.stranger_remaining_return,
                    o.test_return
                ));
            }
        }
        s
    }

    /// Grouped failure-rate table: one row per test algorithm, one column
    /// per stranger algorithm, then the reference column.
    pub fn render_table(&self, title: &str) -> String {
        let groups = self.groups();
        let mut algos: Vec<Algorithm> = Vec::new();
        for g in &groups {
            for a in [g.test_algo, g.stranger_algo].into_iter().flatten() {
                if !algos.contains(&a) {
                    algos.push(a);
                }
            }
        }
        for (_, r) in self.reports() {
            if !algos.contains(&r.stranger_algo) {
                algos.push(r.stranger_algo);
            }
        }
        algos.sort();
        let mut s = format!("{title}\nfailure rate (%), mean ± std across agent pairs\n");
        s.push_str(&format!("{:<8}", "test"));
        for a in &algos {
            s.push_str(&format!("{:>18}", format!("{a} strangers")));
        }
        s.push_str(&format!("{:>18}\n", "reference"));
        let overall_ref = self.overall().reference_rate;
        for t in &algos {
            s.push_str(&format!("{:<8}", t.name()));
            for st in &algos {
                let cell = groups
                    .iter()
                    .find(|g| g.test_algo == Some(*t) && g.stranger_algo == Some(*st))
                    .map_or("-".to_string(), |g| pct(g.failure_rate));
                s.push_str(&format!("{cell:>18}"));
            }
            let own: Vec<f64> = self
                .reports()
                .filter(|(c, r)| self.is_diagonal(c) && r.test_algo == *t)
                .map(|(_, r)| r.failure_rate)
                .collect();
            let r = if own.is_empty() {
                "-".to_string()
            } else {
                pct(mean_std(&own))
            };
            s.push_str(&format!("{r:>18}\n"));
        }
        if let Some(r) = overall_ref {
            s.push_str(&format!("overall reference {}\n", pct(r)));
        }
        if self.failed_cells() > 0 {
            s.push_str(&format!("{} cells failed\n", self.failed_cells()));
        }
        s
    }
}

fn pct((m, sd): (f64, f64)) -> String {
    format!("{:.1} ± {:.1}", 100.0 * m, 100.0 * sd)
}

fn summarize(rs: &[&RelayReport]) -> GroupSummary {
    let rates: Vec<f64> = rs.iter().map(|r| r.failure_rate).collect();
    let rets: Vec<f64> = rs.iter().map(|r| r.mean_return).collect();
    let pooled: Vec<f64> = rs
        .iter()
        .flat_map(|r| r.outcomes.iter().map(|o| f64::from(u8::from(o.failed))))
        .collect();
    GroupSummary {
        test_algo: None,
        stranger_algo: None,
        cells: rs.len(),
        failure_rate: mean_std(&rates),
        failure_state_std: mean_std(&pooled).1,
        mean_return: mean_std(&rets),
        reference_rate: None,
    }
}
