use relaygen::env::{ActionVector, Env, EnvConfig, EnvState, CARTPOLE_ID, HOPPER_ID};
use relaygen::rng::Stream;

fn random_action(d: usize, rng: &mut Stream) -> ActionVector {
    ActionVector::new((0..d).map(|_| rng.uniform() * 2.2 - 1.1).collect())
}

/// Steps `actions` from the env's current state, stopping at the end of the
/// episode. Every step result is serialized.
fn play(env: &mut Env, actions: &[ActionVector]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for a in actions {
        let r = env.step(a).unwrap();
        out.push(r.to_bytes());
        if r.terminated || r.truncated {
            break;
        }
    }
    out
}

fn replay_cases(id: &str, cases: u64) -> usize {
    let cfg = EnvConfig::by_id(id).unwrap();
    let mut live = cfg.build();
    let mut fresh = cfg.build();
    let d = live.spec().d_act;
    let mut checked = 0;
    for case in 0..cases {
        let mut rng = Stream::derive(11, case, "replay-test");
        live.reset(rng.next_u64());
        let warm = rng.below(60);
        let mut alive = true;
        for _ in 0..warm {
            let r = live.step(&random_action(d, &mut rng)).unwrap();
            if r.terminated || r.truncated {
                alive = false;
                break;
            }
        }
        if !alive {
            live.reset(rng.next_u64());
        }
        let snap = live.current().unwrap().to_bytes();
        let actions: Vec<ActionVector> = (0..200).map(|_| random_action(d, &mut rng)).collect();
        let first = play(&mut live, &actions);
        fresh
            .restore(&EnvState::from_bytes(&snap).unwrap())
            .unwrap();
        let second = play(&mut fresh, &actions);
        assert_eq!(first, second, "{id} case {case}");
        checked += 1;
    }
    checked
}

#[test]
fn cartpole_snapshot_replays_bitwise() {
    assert_eq!(replay_cases(CARTPOLE_ID, 1000), 1000);
}

#[test]
fn hopper_snapshot_replays_bitwise() {
    assert_eq!(replay_cases(HOPPER_ID, 1000), 1000);
}

#[test]
fn restoring_twice_is_idempotent() {
    let mut env = Env::by_id(HOPPER_ID).unwrap();
    let (_, s0) = env.reset(5);
    let mut rng = Stream::from_seed(5);
    let actions: Vec<ActionVector> = (0..50).map(|_| random_action(2, &mut rng)).collect();
    env.restore(&s0).unwrap();
    let a = play(&mut env, &actions);
    env.restore(&s0).unwrap();
    env.restore(&s0).unwrap();
    assert_eq!(a, play(&mut env, &actions));
}
