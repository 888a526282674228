//! Labeled observation dumps for external embedding.

use relaygen::agent::{Agent, Mode};
use relaygen::env::{EnvConfig, Observation};
use relaygen::rng::Stream;
use relaygen::sta::StateArchive;
use relaygen::trajectory::rollout;

use crate::manifest::{LoadedManifest, RunStatus};
use crate::HarnessError;

pub const STATES_PER_AGENT: usize = 5000;

/// `n` observations visited by `agent` in deterministic episodes from d0,
/// drawn uniformly without replacement and kept in visit order.
pub fn sample_states(
    agent: &Agent,
    env: &EnvConfig,
    n: usize,
    rng: &mut Stream,
) -> Vec<Observation> {
    let mut env = env.build();
    let mut pool: Vec<Observation> = Vec::new();
    let mut unused = Stream::from_seed(0);
    // enough episodes to have a choice even for agents that fail quickly
    let mut episodes = 0;
    while pool.len() < 2 * n && episodes < 10_000 {
        let (_, s0) = env.reset(rng.next_u64());
        match rollout(
            agent,
            &mut env,
            &s0,
            u64::MAX,
            Mode::Deterministic,
            &mut unused,
        ) {
            Ok(t) => pool.extend(t.observations),
            Err(_) => break,
        }
        episodes += 1;
    }
    if pool.len() <= n {
        return pool;
    }
    let mut idx: Vec<usize> = (0..pool.len()).collect();
    for i in 0..n {
        let j = i + rng.below(pool.len() - i);
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

fn header(prefix: &str, d_obs: usize) -> String {
    let mut s = prefix.to_string();
    for i in 0..d_obs {
        s.push_str(&format!(",o{i}"));
    }
    s.push('\n');
    s
}

/// One row per sampled state of every successful run: agent id, algorithm,
/// then the observation.
pub fn export_manifest(m: &LoadedManifest, per_agent: usize) -> Result<String, HarnessError> {
    let env = &m.config.env;
    let d_obs = env.build().spec().d_obs;
    let mut s = header("agent_id,algorithm", d_obs);
    for run in m.manifest.runs.iter().filter(|r| r.status == RunStatus::Ok) {
        let agent = m.load_agent(run).map_err(HarnessError::Config)?;
        let mut rng = Stream::derive(m.config.master_seed, run.seed, "export/states");
        for o in sample_states(&agent, env, per_agent, &mut rng) {
            s.push_str(&format!("{},{}", run.id, agent.algorithm()));
            for v in &o.values {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
    }
    Ok(s)
}

/// Archive entries with their epoch and score.
pub fn export_archive(archive: &StateArchive) -> Result<String, HarnessError> {
    Ok(archive.to_csv()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use relaygen::agent::AgentConfig;
    use relaygen::env::CARTPOLE_ID;

    #[test]
    fn samples_are_distinct_ordered_and_reproducible() {
        let env = EnvConfig::by_id(CARTPOLE_ID).unwrap();
        let cfg = AgentConfig {
            hidden_sizes: vec![8],
            ..AgentConfig::default()
        };
        let agent = Agent::new(cfg, CARTPOLE_ID, 4, 1, Stream::from_seed(1)).unwrap();
        let a = sample_states(&agent, &env, 50, &mut Stream::from_seed(2));
        let b = sample_states(&agent, &env, 50, &mut Stream::from_seed(2));
        assert_eq!(a.len(), 50);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_archive_is_header_only() {
        let csv = export_archive(&StateArchive::new(CARTPOLE_ID, None)).unwrap();
        assert_eq!(csv, "epoch,score,q,o0,o1,o2,o3\n");
    }
}
