//! The `relay` command: every test agent against every stranger's states.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};

use relaygen::agent::Agent;
use relaygen::env::EnvConfig;
use relaygen::relay::{
    bootstrap_mean_diff, harvest_controllable_states, harvest_stream, mean_std, par_map,
    q_failure_analysis, relay_matrix, Harvest, QAnalysis, RelayConfig, RelayMatrix,
};
use relaygen::rng::Stream;

use crate::harvest_cache;
use crate::manifest::LoadedManifest;
use crate::report::{self, FleetMeta, ReportInput, ReportMeta, REPORT_SCHEMA};
use crate::{write_file, HarnessError};

pub const L_SWEEP: [u64; 4] = [50, 100, 200, 500];
pub const BOOTSTRAP_RESAMPLES: usize = 2000;

#[derive(Clone, Debug)]
pub struct RelayOptions {
    pub configs: Vec<RelayConfig>,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    /// Harvest cache directory; `None` disables caching.
    pub cache: Option<PathBuf>,
    /// Prefix for report file names.
    pub prefix: String,
}

pub struct LoadedAgent {
    pub id: String,
    pub agent: Agent,
    pub checkpoint: Vec<u8>,
}

/// Q statistics of one test agent, or all of them pooled (`test_id` "all").
#[derive(Clone, Debug, PartialEq)]
pub struct QRow {
    pub test_id: String,
    pub analysis: QAnalysis,
    /// 95% bootstrap interval of mean Q on successes minus mean Q on failures.
    pub diff_ci: Option<(f64, f64)>,
}

pub struct RelayRun {
    pub config: RelayConfig,
    pub matrix: RelayMatrix,
    pub q: Vec<QRow>,
    pub stem: PathBuf,
}

pub struct RelayResult {
    pub runs: Vec<RelayRun>,
    /// Agents that could not be loaded; they appear in no matrix.
    pub load_failures: usize,
}

impl RelayResult {
    pub fn failures(&self) -> usize {
        self.load_failures
            + self
                .runs
                .iter()
                .map(|r| r.matrix.failed_cells())
                .sum::<usize>()
    }
}

fn load_fleet(fleets: &[LoadedManifest], failures: &mut usize) -> Vec<LoadedAgent> {
    let mut out: Vec<LoadedAgent> = Vec::new();
    for m in fleets {
        *failures += m.manifest.failed_runs();
        for run in m
            .manifest
            .runs
            .iter()
            .filter(|r| r.status == crate::RunStatus::Ok)
        {
            let loaded = m
                .checkpoint_path(run)
                .ok_or_else(|| "no checkpoint".to_string())
                .and_then(|p| std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display())))
                .and_then(|bytes| {
                    Agent::from_bytes(&bytes)
                        .map(|a| (a, bytes))
                        .map_err(|e| e.to_string())
                });
            match loaded {
                Ok((agent, checkpoint)) if !out.iter().any(|a| a.id == run.id) => {
                    out.push(LoadedAgent {
                        id: run.id.clone(),
                        agent,
                        checkpoint,
                    })
                }
                Ok(_) => {}
                Err(e) => {
                    warn!("{}: cannot load agent: {e}", run.id);
                    *failures += 1;
                }
            }
        }
    }
    out
}

fn shared_env(fleets: &[&LoadedManifest]) -> Result<EnvConfig, HarnessError> {
    let first = fleets
        .first()
        .ok_or_else(|| HarnessError::Config("no manifests given".into()))?;
    for m in fleets {
        if m.config.env != first.config.env {
            return Err(HarnessError::Incomparable(format!(
                "{} and {} use different environments",
                first.dir.display(),
                m.dir.display()
            )));
        }
    }
    Ok(first.config.env.clone())
}

/// Harvests for `agents`, read from the cache where possible.
pub fn harvests_for(
    agents: &[LoadedAgent],
    env: &EnvConfig,
    cfg: &RelayConfig,
    seed: u64,
    cache: Option<&Path>,
    jobs: usize,
) -> Vec<Result<Harvest, String>> {
    par_map(agents, jobs, |a| {
        let key = harvest_cache::cache_key(&a.checkpoint, &a.id, env, cfg, seed);
        if let Some(h) = cache.and_then(|dir| harvest_cache::load(dir, &key, env)) {
            return Ok(h);
        }
        let h = harvest_controllable_states(
            &a.agent,
            &a.id,
            &mut env.build(),
            cfg,
            &mut harvest_stream(seed, &a.id),
        )
        .map_err(|e| e.to_string())?;
        if let Some(dir) = cache {
            if let Err(e) = harvest_cache::store(dir, &key, &h) {
                warn!("harvest cache write failed: {e}");
            }
        }
        Ok(h)
    })
}

/// Per-test-agent Q analysis over off-diagonal outcomes, plus a pooled row.
pub fn q_rows(
    matrix: &RelayMatrix,
    tests: &[LoadedAgent],
    own: &[Result<Harvest, String>],
    seed: u64,
) -> Vec<QRow> {
    let mut rows = Vec::new();
    let mut pooled_pairs = Vec::new();
    let mut pooled_own = Vec::new();
    for (ti, t) in tests.iter().enumerate() {
        let mut pairs = Vec::new();
        for (c, r) in matrix
            .reports()
            .filter(|(c, _)| c.test == ti && !matrix.is_diagonal(c))
        {
            let Ok(h) = &matrix.harvests[c.stranger] else {
                continue;
            };
            for o in &r.outcomes {
                pairs.push((o.clone(), h.states[o.state_index].stranger_remaining_return));
            }
        }
        let own_states = own[ti].as_ref().map(|h| h.states.as_slice()).unwrap_or(&[]);
        let analysis = q_failure_analysis(&t.agent, &pairs, own_states);
        pooled_own.extend(
            own_states
                .iter()
                .map(|s| f64::from(t.agent.q_at_policy(&s.observation.to_f32(), 1)[0])),
        );
        pooled_pairs.extend(pairs);
        let ci = diff_ci(
            &analysis,
            &mut Stream::derive(seed, ti as u64, "relay/bootstrap"),
        );
        rows.push(QRow {
            test_id: t.id.clone(),
            analysis,
            diff_ci: ci,
        });
    }
    // pooled: Q values of different agents are compared as-is
    let mut pooled = pooled_analysis(&pooled_pairs);
    pooled.own_state_q = mean_std(&pooled_own);
    let ci = diff_ci(
        &pooled,
        &mut Stream::derive(seed, u64::MAX, "relay/bootstrap"),
    );
    rows.push(QRow {
        test_id: "all".into(),
        analysis: pooled,
        diff_ci: ci,
    });
    rows
}

fn pooled_analysis(pairs: &[(relaygen::relay::RelayOutcome, f64)]) -> QAnalysis {
    let part = |want: bool| {
        let sel: Vec<_> = pairs.iter().filter(|(o, _)| o.failed == want).collect();
        relaygen::relay::PartitionStats {
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
    QAnalysis {
        failed: part(true),
        succeeded: part(false),
        own_state_q: (0.0, 0.0),
        samples: pairs
            .iter()
            .map(|(o, _)| (f64::from(o.q_at_takeover), o.failed))
            .collect(),
    }
}

fn diff_ci(a: &QAnalysis, rng: &mut Stream) -> Option<(f64, f64)> {
    let ok: Vec<f64> = a.samples.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let bad: Vec<f64> = a.samples.iter().filter(|s| s.1).map(|s| s.0).collect();
    (!ok.is_empty() && !bad.is_empty())
        .then(|| bootstrap_mean_diff(&ok, &bad, BOOTSTRAP_RESAMPLES, 0.95, rng))
}

fn q_csv(rows: &[QRow]) -> String {
    let mut s = String::from(
        "test_id,n_failed,q_failed_mean,q_failed_std,n_succeeded,q_succeeded_mean,q_succeeded_std,q_own_mean,q_own_std,stranger_return_failed,stranger_return_succeeded,diff_ci_lo,diff_ci_hi\n",
    );
    for r in rows {
        let a = &r.analysis;
        let (lo, hi) = r.diff_ci.map_or((String::new(), String::new()), |(l, h)| {
            (l.to_string(), h.to_string())
        });
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{lo},{hi}\n",
            r.test_id,
            a.failed.n,
            a.failed.q.0,
            a.failed.q.1,
            a.succeeded.n,
            a.succeeded.q.0,
            a.succeeded.q.1,
            a.own_state_q.0,
            a.own_state_q.1,
            a.failed.stranger_return.0,
            a.succeeded.stranger_return.0,
        ));
    }
    s
}

fn fleet_meta(role: &str, m: &LoadedManifest) -> FleetMeta {
    let ok = m
        .manifest
        .runs
        .iter()
        .filter(|r| r.status == crate::RunStatus::Ok);
    FleetMeta {
        role: role.into(),
        name: m.manifest.name.clone(),
        variant: m.manifest.variant,
        algorithm: m.manifest.algorithm,
        config_hash: m.manifest.config_hash.clone(),
        manifest: m.dir.display().to_string(),
        ids: ok.clone().map(|r| r.id.clone()).collect(),
        ordinary_returns: ok.filter_map(|r| r.ordinary_return).collect(),
    }
}

pub fn stem_for(prefix: &str, cfg: &RelayConfig) -> String {
    format!("{prefix}L{}-{}", cfg.horizon, cfg.failure_mode.label())
}

/// Runs one matrix per relay config and writes its report files.
pub fn cmd_relay(
    tests: &[LoadedManifest],
    strangers: &[LoadedManifest],
    opts: &RelayOptions,
) -> Result<RelayResult, HarnessError> {
    let all: Vec<&LoadedManifest> = tests.iter().chain(strangers).collect();
    let env = shared_env(&all)?;
    let mut load_failures = 0;
    let test_agents = load_fleet(tests, &mut load_failures);
    let stranger_agents = load_fleet(strangers, &mut load_failures);
    let mut fleets: Vec<FleetMeta> = tests.iter().map(|m| fleet_meta("test", m)).collect();
    fleets.extend(strangers.iter().map(|m| fleet_meta("stranger", m)));
    let test_pairs: Vec<(String, Agent)> = test_agents
        .iter()
        .map(|a| (a.id.clone(), a.agent.clone()))
        .collect();
    let stranger_pairs: Vec<(String, Agent)> = stranger_agents
        .iter()
        .map(|a| (a.id.clone(), a.agent.clone()))
        .collect();

    let mut runs = Vec::new();
    for cfg in &opts.configs {
        cfg.validate()?;
        let cache = opts.cache.as_deref();
        let harvests = harvests_for(&stranger_agents, &env, cfg, opts.seed, cache, opts.jobs);
        let by_id: BTreeMap<&str, usize> = stranger_agents
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.as_str(), i))
            .collect();
        let own: Vec<Result<Harvest, String>> = {
            let missing: Vec<usize> = (0..test_agents.len())
                .filter(|i| !by_id.contains_key(test_agents[*i].id.as_str()))
                .collect();
            let fresh = harvests_for(
                &missing
                    .iter()
                    .map(|i| clone_loaded(&test_agents[*i]))
                    .collect::<Vec<_>>(),
                &env,
                cfg,
                opts.seed,
                cache,
                opts.jobs,
            );
            let mut fresh = fresh.into_iter();
            test_agents
                .iter()
                .map(|t| match by_id.get(t.id.as_str()) {
                    Some(&s) => harvests[s].clone(),
                    None => fresh.next().expect("one fresh harvest per missing id"),
                })
                .collect()
        };
        let matrix = relay_matrix(
            &test_pairs,
            &stranger_pairs,
            &env,
            cfg,
            opts.seed,
            Some(harvests),
            opts.jobs,
        )?;
        for c in &matrix.cells {
            if let Err(e) = &c.result {
                warn!(
                    "cell {} <- {}: {e}",
                    matrix.test_ids[c.test], matrix.stranger_ids[c.stranger]
                );
            }
        }
        let q = q_rows(&matrix, &test_agents, &own, opts.seed);
        let stem = opts.out.join(stem_for(&opts.prefix, cfg));
        let meta = ReportMeta {
            schema_version: REPORT_SCHEMA,
            horizon: cfg.horizon,
            failure_mode: cfg.failure_mode.label(),
            m_trajs: cfg.m_trajs,
            eta: cfg.eta,
            k_per_traj: cfg.k_per_traj,
            seed: opts.seed,
            failed_cells: matrix.failed_cells(),
            fleets: fleets.clone(),
        };
        write_file(&report::csv_path(&stem), matrix.to_csv())?;
        write_file(
            &report::companion(&stem, ".states.csv"),
            matrix.per_state_csv(),
        )?;
        write_file(&report::companion(&stem, ".q.csv"), q_csv(&q))?;
        write_file(
            &report::meta_path(&stem),
            toml::to_string(&meta).expect("meta serializes"),
        )?;
        let input = report::load_input(&stem)?;
        write_file(&report::companion(&stem, ".txt"), report::render(&[input])?)?;
        let o = matrix.overall();
        info!(
            "L = {} {}: off-diagonal failure {:.3}, reference {:?}",
            cfg.horizon,
            cfg.failure_mode.label(),
            o.failure_rate.0,
            o.reference_rate.map(|r| r.0)
        );
        runs.push(RelayRun {
            config: cfg.clone(),
            matrix,
            q,
            stem,
        });
    }
    Ok(RelayResult {
        runs,
        load_failures,
    })
}

fn clone_loaded(a: &LoadedAgent) -> LoadedAgent {
    LoadedAgent {
        id: a.id.clone(),
        agent: a.agent.clone(),
        checkpoint: a.checkpoint.clone(),
    }
}

/// Reads back every report written by `result`.
pub fn inputs(result: &RelayResult) -> Result<Vec<ReportInput>, HarnessError> {
    result
        .runs
        .iter()
        .map(|r| report::load_input(&r.stem))
        .collect()
}
