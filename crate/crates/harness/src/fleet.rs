//! Training a fleet of independently seeded agents.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use log::{info, warn};

use relaygen::agent::Agent;
use relaygen::relay::par_map;
use relaygen::rng::Stream;
use relaygen::sta::{build_pretrained_pool, naive_train, sta_train, StateArchive};
use relaygen::train::{train_ordinary, TrainStreams, TrainingLog};
use relaygen::trajectory::evaluate;

use crate::config::{ExperimentConfig, Variant};
use crate::manifest::{self, run_id, RunManifest, RunRecord, RunStatus};
use crate::{read_file, write_file, HarnessError};

/// Offset separating the pretrained fleet's run indices from the main ones.
pub const PRETRAIN_RUN_OFFSET: u64 = 1 << 32;

pub const POOL_FILE: &str = "pool.rgsa";

struct Trained {
    agent: Agent,
    log: TrainingLog,
    archive: Option<StateArchive>,
}

pub fn init_agent(cfg: &ExperimentConfig, seed: u64) -> Result<Agent, HarnessError> {
    let spec = cfg.env.build().spec().clone();
    Ok(Agent::new(
        cfg.agent_config_for(seed),
        cfg.env.env_id(),
        spec.d_obs,
        spec.d_act,
        Stream::derive(cfg.master_seed, seed, "agent/init"),
    )?)
}

fn train_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    pool: Option<&StateArchive>,
) -> Result<Trained, HarnessError> {
    let mut agent = init_agent(cfg, seed)?;
    let mut env = cfg.env.build();
    let mut streams = TrainStreams::derive(cfg.master_seed, seed);
    let steps = cfg.total_steps;
    let (log, archive) = match cfg.variant {
        Variant::Ordinary | Variant::InfiniteBuffer | Variant::RandomHparams => {
            let log = train_ordinary(&mut agent, &mut env, steps, &mut streams)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            (log, None)
        }
        Variant::Sta => {
            let run = sta_train(&mut agent, &mut env, steps, &cfg.sta, &mut streams)?;
            (run.log, Some(run.archive))
        }
        Variant::Naive => {
            let pool = pool
                .cloned()
                .unwrap_or_else(|| StateArchive::new(env.env_id(), None));
            let (log, _) =
                naive_train(&mut agent, &mut env, steps, pool, &cfg.naive, &mut streams)?;
            (log, None)
        }
    };
    Ok(Trained {
        agent,
        log,
        archive,
    })
}

/// Mean deterministic return from d0 over `cfg.eval_episodes` episodes.
pub fn ordinary_return(cfg: &ExperimentConfig, agent: &Agent, seed: u64) -> Option<f64> {
    if cfg.eval_episodes == 0 {
        return None;
    }
    let mut rng = Stream::derive(cfg.master_seed, seed, "eval/ordinary");
    let seeds: Vec<u64> = (0..cfg.eval_episodes).map(|_| rng.next_u64()).collect();
    let trajs = evaluate(agent, &mut cfg.env.build(), &seeds).ok()?;
    Some(trajs.iter().map(|t| t.total_return()).sum::<f64>() / trajs.len() as f64)
}

fn run_and_save(
    cfg: &ExperimentConfig,
    seed: u64,
    dir: &Path,
    pool: Option<&StateArchive>,
) -> RunRecord {
    let id = run_id(&cfg.name, seed);
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(|| train_seed(cfg, seed, pool)))
        .unwrap_or_else(|p| Err(HarnessError::Config(panic_message(&p))));
    let wall_clock_s = started.elapsed().as_secs_f64();
    let failed = |error: String| RunRecord {
        id: id.clone(),
        seed,
        status: RunStatus::Failed,
        error: Some(error),
        checkpoint: None,
        training_log: None,
        archive: None,
        env_steps: 0,
        updates: 0,
        restored_episodes: 0,
        wall_clock_s,
        ordinary_return: None,
    };
    let trained = match result {
        Ok(t) => t,
        Err(e) => {
            warn!("{id}: training aborted: {e}");
            return failed(e.to_string());
        }
    };
    let checkpoint = format!("checkpoints/{id}.stac");
    let training_log = format!("logs/{id}.csv");
    let archive = trained
        .archive
        .as_ref()
        .map(|_| format!("archives/{id}.rgsa"));
    let saved = (|| -> Result<(), HarnessError> {
        write_file(&dir.join(&checkpoint), trained.agent.to_bytes())?;
        write_file(&dir.join(&training_log), trained.log.to_csv())?;
        if let (Some(a), Some(path)) = (&trained.archive, &archive) {
            write_file(&dir.join(path), a.encode())?;
        }
        Ok(())
    })();
    if let Err(e) = saved {
        return failed(e.to_string());
    }
    let ordinary_return = ordinary_return(cfg, &trained.agent, seed);
    info!(
        "{id}: {} steps in {wall_clock_s:.1}s, ordinary return {}",
        trained.log.env_steps,
        ordinary_return.map_or("-".into(), |r| format!("{r:.1}"))
    );
    RunRecord {
        id,
        seed,
        status: RunStatus::Ok,
        error: None,
        checkpoint: Some(checkpoint),
        training_log: Some(training_log),
        archive,
        env_steps: trained.log.env_steps,
        updates: trained.log.updates,
        restored_episodes: trained.log.restored_episodes,
        wall_clock_s,
        ordinary_return,
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// The pool for a naive fleet: loaded from `pool_path`, or built from a
/// freshly trained ordinary fleet stored under `dir/pretrained`.
fn naive_pool(
    cfg: &ExperimentConfig,
    dir: &Path,
    jobs: usize,
) -> Result<StateArchive, HarnessError> {
    if let Some(path) = &cfg.naive.pool_path {
        let pool = StateArchive::decode(&read_file(Path::new(path))?)?;
        if pool.env_id != cfg.env.env_id() {
            return Err(HarnessError::Config(format!(
                "pool {path} is for {}",
                pool.env_id
            )));
        }
        return Ok(pool);
    }
    let pre = ExperimentConfig {
        name: format!("{}-pretrained", cfg.name),
        variant: Variant::Ordinary,
        seeds: (0..cfg.naive.n_pretrained as u64)
            .map(|i| PRETRAIN_RUN_OFFSET + i)
            .collect(),
        n_seeds: cfg.naive.n_pretrained,
        ..cfg.clone()
    };
    let pre_dir = dir.join("pretrained");
    let m = train_fleet(&pre, &pre_dir, jobs)?;
    let loaded = manifest::load(&pre_dir)?;
    let agents: Vec<_> = m
        .runs
        .iter()
        .filter(|r| r.status == RunStatus::Ok)
        .map(|r| {
            loaded
                .load_agent(r)
                .map_err(relaygen::agent::AgentError::Config)
        })
        .collect();
    let mut rng = Stream::derive(cfg.master_seed, 0, "naive/pool");
    let (pool, errors) = build_pretrained_pool(
        &agents,
        &mut cfg.env.build(),
        cfg.naive.m_trajs,
        cfg.naive.eta_naive,
        &mut rng,
    );
    for (k, e) in errors {
        warn!("pretrained agent {k} skipped: {e}");
    }
    Ok(pool)
}

/// Trains every seed of `cfg` into `dir` and writes the manifest. Failed
/// seeds are recorded and do not stop the others.
pub fn train_fleet(
    cfg: &ExperimentConfig,
    dir: &Path,
    jobs: usize,
) -> Result<RunManifest, HarnessError> {
    cfg.validate()?;
    let mut manifest = RunManifest::new(cfg);
    let pool = if cfg.variant == Variant::Naive && cfg.naive.p0 > 0.0 {
        let pool = naive_pool(cfg, dir, jobs)?;
        write_file(&dir.join(POOL_FILE), pool.encode())?;
        manifest.pool = Some(POOL_FILE.into());
        Some(pool)
    } else {
        None
    };
    manifest.runs = par_map(&cfg.seeds(), jobs, |&seed| {
        run_and_save(cfg, seed, dir, pool.as_ref())
    });
    manifest.write(dir, cfg)?;
    Ok(manifest)
}
