//! Cart-pole at the desk budget: 5 seeds, 100k steps each (about 25 minutes).

use relaygen::agent::{Agent, AgentConfig, Algorithm};
use relaygen::env::{EnvConfig, CARTPOLE_ID};
use relaygen::rng::Stream;
use relaygen::train::{train_ordinary, TrainStreams, TrainingLog};
use relaygen::trajectory::evaluate;

const MASTER_SEED: u64 = 0;
const STEPS: u64 = 100_000;

/// Training log and the mean return of 10 deterministic episodes from d0.
fn run(seed: u64) -> (TrainingLog, f64) {
    let env_cfg = EnvConfig::by_id(CARTPOLE_ID).unwrap();
    let mut agent = Agent::new(
        AgentConfig::desk(Algorithm::Sac),
        CARTPOLE_ID,
        4,
        1,
        Stream::derive(MASTER_SEED, seed, "agent/init"),
    )
    .unwrap();
    let log = train_ordinary(
        &mut agent,
        &mut env_cfg.build(),
        STEPS,
        &mut TrainStreams::derive(MASTER_SEED, seed),
    )
    .unwrap();
    let mut rng = Stream::derive(MASTER_SEED, seed, "eval/ordinary");
    let seeds: Vec<u64> = (0..10).map(|_| rng.next_u64()).collect();
    let trajs = evaluate(&agent, &mut env_cfg.build(), &seeds).unwrap();
    (
        log,
        trajs.iter().map(|t| t.total_return()).sum::<f64>() / 10.0,
    )
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

#[test]
fn cartpole_desk_profile_learns() {
    let runs: Vec<(TrainingLog, f64)> = (0..5).map(run).collect();
    for (seed, (log, eval)) in runs.iter().enumerate() {
        let returns: Vec<f64> = log.episodes.iter().map(|e| e.total_return).collect();
        let q = returns.len() / 4;
        let first = median(returns[..q].to_vec());
        let last = median(returns[returns.len() - q..].to_vec());
        println!(
            "seed {seed}: {} episodes, first-quartile median {first:.1}, last-quartile median {last:.1}, \
             last 10 training episodes {:.1}, 10-episode evaluation {eval:.1}",
            returns.len(),
            log.recent_mean_return(10).unwrap()
        );
        assert!(last > first, "seed {seed}");
    }
    let fixture = runs[0].1;
    assert!(fixture >= 900.0, "seed 0 evaluation mean {fixture:.1}");
}
