//! `STAC` checkpoint file.
//!
//! Layout (little-endian): magic, u16 version, u8 algorithm id, env id,
//! hyperparameter text, u32 obs dim, u32 act dim, u64 env steps, u64 update
//! count, then a table of named networks (layer sizes followed by f32
//! parameters), one Adam state per trained network, the temperature (SAC
//! only) and the agent's RNG stream.

use super::{Agent, AgentConfig, AgentError, Algorithm, SacAgent, Td3Agent, TwinCritics};
use crate::codec::{CodecError, Reader, Writer};
use crate::nn::{Adam, AdamConfig, Layer, Mlp};
use crate::rng::Stream;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STAC";
pub const CHECKPOINT_VERSION: u16 = 1;

fn put_mlp(w: &mut Writer, name: &str, net: &Mlp<f32>) {
    w.str(name);
    let sizes = net.layer_sizes();
    w.u32(sizes.len() as u32);
    for s in &sizes {
        w.u32(*s as u32);
    }
    for slot in net.slices() {
        w.f32s(slot);
    }
}

fn get_mlp(r: &mut Reader<'_>, name: &str) -> Result<Mlp<f32>, CodecError> {
    let found = r.str()?;
    if found != name {
        return Err(CodecError::Malformed(format!(
            "expected network {name:?}, found {found:?}"
        )));
    }
    let n = r.u32()? as usize;
    if !(2..=64).contains(&n) {
        return Err(CodecError::Malformed(format!(
            "network {name} has {n} layer sizes"
        )));
    }
    let sizes = (0..n)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let mut layers = Vec::with_capacity(n - 1);
    for pair in sizes.windows(2) {
        let (inputs, outputs) = (pair[0], pair[1]);
        let weight = r.f32s(inputs.checked_mul(outputs).ok_or_else(|| overflow(name))?)?;
        let bias = r.f32s(outputs)?;
        layers.push(Layer {
            inputs,
            outputs,
            weight,
            bias,
        });
    }
    Mlp::from_layers(layers).map_err(|e| CodecError::Malformed(e.to_string()))
}

fn overflow(name: &str) -> CodecError {
    CodecError::Malformed(format!("network {name} size overflows"))
}

fn put_adam(w: &mut Writer, opt: &Adam<f32>) {
    w.u64(opt.step_count);
    for (m, v) in opt.first_moment.iter().zip(&opt.second_moment) {
        w.f32s(m);
        w.f32s(v);
    }
}

fn get_adam(
    r: &mut Reader<'_>,
    config: AdamConfig,
    lens: &[usize],
) -> Result<Adam<f32>, CodecError> {
    let mut opt = Adam::new(config, lens);
    opt.step_count = r.u64()?;
    for (i, len) in lens.iter().enumerate() {
        opt.first_moment[i] = r.f32s(*len)?;
        opt.second_moment[i] = r.f32s(*len)?;
    }
    Ok(opt)
}

fn lens(net: &Mlp<f32>) -> Vec<usize> {
    net.slices().iter().map(|s| s.len()).collect()
}

pub(super) fn encode(agent: &Agent) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.u8(agent.algorithm().id());
    w.str(agent.env_id());
    w.str(&agent.config().to_canonical_text());
    w.u32(agent.obs_dim() as u32);
    w.u32(agent.act_dim() as u32);
    w.u64(agent.total_env_steps());
    w.u64(agent.update_count());
    let c = agent.critics();
    match agent {
        Agent::Sac(a) => {
            for (name, net) in [
                ("policy", &a.policy),
                ("q1", &c.q1),
                ("q2", &c.q2),
                ("q1_target", &c.q1_target),
                ("q2_target", &c.q2_target),
            ] {
                put_mlp(&mut w, name, net);
            }
            put_adam(&mut w, &a.policy_opt);
            put_adam(&mut w, &c.q1_opt);
            put_adam(&mut w, &c.q2_opt);
            w.f32(a.log_alpha);
            put_adam(&mut w, &a.alpha_opt);
            a.rng.encode(&mut w);
        }
        Agent::Td3(a) => {
            for (name, net) in [
                ("policy", &a.policy),
                ("policy_target", &a.policy_target),
                ("q1", &c.q1),
                ("q2", &c.q2),
                ("q1_target", &c.q1_target),
                ("q2_target", &c.q2_target),
            ] {
                put_mlp(&mut w, name, net);
            }
            put_adam(&mut w, &a.policy_opt);
            put_adam(&mut w, &c.q1_opt);
            put_adam(&mut w, &c.q2_opt);
            a.rng.encode(&mut w);
        }
    }
    w.into_inner()
}

pub(super) fn decode(bytes: &[u8]) -> Result<Agent, AgentError> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(CodecError::Version {
            what: "checkpoint",
            found: version,
            supported: CHECKPOINT_VERSION,
        }
        .into());
    }
    let alg_id = r.u8()?;
    let algorithm = Algorithm::from_id(alg_id)
        .ok_or_else(|| CodecError::Malformed(format!("unknown algorithm id {alg_id}")))?;
    let env_id = r.str()?;
    let config = AgentConfig::from_canonical_text(&r.str()?)?;
    if config.algorithm != algorithm {
        return Err(
            CodecError::Malformed("algorithm id disagrees with hyperparameters".into()).into(),
        );
    }
    let obs_dim = r.u32()? as usize;
    let act_dim = r.u32()? as usize;
    let total_env_steps = r.u64()?;
    let update_count = r.u64()?;
    let adam = AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    };

    let check = |net: &Mlp<f32>, input: usize, output: usize, name: &str| {
        if net.input_dim() != input || net.output_dim() != output {
            Err(CodecError::Malformed(format!(
                "network {name} has the wrong shape"
            )))
        } else {
            Ok(())
        }
    };

    let agent = match algorithm {
        Algorithm::Sac => {
            let policy = get_mlp(&mut r, "policy")?;
            check(&policy, obs_dim, 2 * act_dim, "policy")?;
            let (q1, q2, q1_target, q2_target) = read_critics(&mut r, obs_dim + act_dim)?;
            let policy_opt = get_adam(&mut r, adam, &lens(&policy))?;
            let q1_opt = get_adam(&mut r, adam, &lens(&q1))?;
            let q2_opt = get_adam(&mut r, adam, &lens(&q2))?;
            let log_alpha = r.f32()?;
            let alpha_opt = get_adam(&mut r, adam, &[1])?;
            let rng = Stream::decode(&mut r)?;
            Agent::Sac(SacAgent {
                config,
                env_id,
                obs_dim,
                act_dim,
                policy,
                policy_opt,
                critics: TwinCritics {
                    q1,
                    q2,
                    q1_target,
                    q2_target,
                    q1_opt,
                    q2_opt,
                },
                log_alpha,
                alpha_opt,
                rng,
                update_count,
                total_env_steps,
            })
        }
        Algorithm::Td3 => {
            let policy = get_mlp(&mut r, "policy")?;
            check(&policy, obs_dim, act_dim, "policy")?;
            let policy_target = get_mlp(&mut r, "policy_target")?;
            if policy_target.layer_sizes() != policy.layer_sizes() {
                return Err(CodecError::Malformed("policy_target shape".into()).into());
            }
            let (q1, q2, q1_target, q2_target) = read_critics(&mut r, obs_dim + act_dim)?;
            let policy_opt = get_adam(&mut r, adam, &lens(&policy))?;
            let q1_opt = get_adam(&mut r, adam, &lens(&q1))?;
            let q2_opt = get_adam(&mut r, adam, &lens(&q2))?;
            let rng = Stream::decode(&mut r)?;
            Agent::Td3(Td3Agent {
                config,
                env_id,
                obs_dim,
                act_dim,
                policy,
                policy_target,
                policy_opt,
                critics: TwinCritics {
                    q1,
                    q2,
                    q1_target,
                    q2_target,
                    q1_opt,
                    q2_opt,
                },
                rng,
                update_count,
                total_env_steps,
            })
        }
    };
    r.finish()?;
    Ok(agent)
}

type Quad = (Mlp<f32>, Mlp<f32>, Mlp<f32>, Mlp<f32>);

fn read_critics(r: &mut Reader<'_>, input: usize) -> Result<Quad, CodecError> {
    let q1 = get_mlp(r, "q1")?;
    let q2 = get_mlp(r, "q2")?;
    let q1_target = get_mlp(r, "q1_target")?;
    let q2_target = get_mlp(r, "q2_target")?;
    for (name, net) in [
        ("q1", &q1),
        ("q2", &q2),
        ("q1_target", &q1_target),
        ("q2_target", &q2_target),
    ] {
        if net.input_dim() != input || net.output_dim() != 1 {
            return Err(CodecError::Malformed(format!(
                "network {name} has the wrong shape"
            )));
        }
    }
    if q1_target.layer_sizes() != q1.layer_sizes() || q2_target.layer_sizes() != q2.layer_sizes() {
        return Err(CodecError::Malformed(
            "target network shapes differ from live networks".into(),
        ));
    }
    Ok((q1, q2, q1_target, q2_target))
}

#[cfg(test)]
mod tests {
    use super::super::{Mode, ReplayBuffer};
    use super::*;

    fn trained(alg: Algorithm) -> Agent {
        let cfg = AgentConfig {
            hidden_sizes: vec![8, 8],
            batch_size: 8,
            ..AgentConfig::desk(alg)
        };
        let mut agent = Agent::new(cfg, "planar-hopper-v1", 3, 2, Stream::from_seed(11)).unwrap();
        let mut rng = Stream::from_seed(12);
        let mut rb = ReplayBuffer::new(3, 2, Some(64));
        for i in 0..40 {
            let o: Vec<f32> = (0..3).map(|_| rng.normal() as f32).collect();
            rb.push(&o, &[0.3, -0.1], 0.5, &o, i % 9 == 0);
        }
        for _ in 0..7 {
            agent.update(&rb.sample(8, &mut rng)).unwrap();
        }
        agent.add_env_steps(40);
        agent
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for alg in [Algorithm::Sac, Algorithm::Td3] {
            let a = trained(alg);
            let bytes = a.to_bytes();
            let b = Agent::from_bytes(&bytes).unwrap();
            assert_eq!(a, b);
            assert_eq!(b.to_bytes(), bytes);
            let mut r1 = Stream::from_seed(1);
            let mut r2 = Stream::from_seed(1);
            let obs = [0.1f32, 0.2, 0.3];
            assert_eq!(
                a.act_rows(&obs, 1, Mode::Stochastic, &mut r1),
                b.act_rows(&obs, 1, Mode::Stochastic, &mut r2)
            );
        }
    }

    #[test]
    fn header_fields_are_where_documented() {
        let bytes = trained(Algorithm::Td3).to_bytes();
        assert_eq!(&bytes[..4], b"STAC");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), CHECKPOINT_VERSION);
        assert_eq!(bytes[6], 1);
        let len = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        assert_eq!(&bytes[11..11 + len], b"planar-hopper-v1");
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let bytes = trained(Algorithm::Sac).to_bytes();
        assert!(Agent::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Agent::from_bytes(&extra).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            Agent::from_bytes(&bad),
            Err(AgentError::Checkpoint(CodecError::Version { found: 9, .. }))
        ));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Agent::from_bytes(&bad).is_err());
    }
}
