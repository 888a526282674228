use super::losses::{critic_values, td3_actor_loss};
use super::{clamp_action, AgentConfig, AgentError, Batch, Mode, TwinCritics, UpdateDiagnostics};
use crate::nn::{Adam, AdamConfig, Mlp};
use crate::rng::Stream;

/// Twin delayed deterministic policy gradient. The policy network emits
/// pre-squash values; actions are `tanh` of its output.
#[derive(Clone, Debug, PartialEq)]
pub struct Td3Agent {
    pub config: AgentConfig,
    pub env_id: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub policy: Mlp<f32>,
    pub policy_target: Mlp<f32>,
    pub policy_opt: Adam<f32>,
    pub critics: TwinCritics,
    pub rng: Stream,
    pub update_count: u64,
    pub total_env_steps: u64,
}

impl Td3Agent {
    pub fn new(
        config: AgentConfig,
        env_id: &str,
        obs_dim: usize,
        act_dim: usize,
        mut rng: Stream,
    ) -> Self {
        let adam = AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        };
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(&config.hidden_sizes);
        sizes.push(act_dim);
        let policy = Mlp::new(&sizes, &mut rng);
        let lens: Vec<usize> = policy.slices().iter().map(|s| s.len()).collect();
        let critics = TwinCritics::new(obs_dim + act_dim, &config.hidden_sizes, adam, &mut rng);
        Self {
            env_id: env_id.to_string(),
            obs_dim,
            act_dim,
            policy_target: policy.clone(),
            policy_opt: Adam::new(adam, &lens),
            policy,
            critics,
            rng,
            update_count: 0,
            total_env_steps: 0,
            config,
        }
    }

    pub fn act_rows(&self, obs: &[f32], batch: usize, mode: Mode, rng: &mut Stream) -> Vec<f32> {
        let out = self.policy.forward(obs, batch).expect("observation shape");
        let sigma = self.config.exploration_noise;
        out.iter()
            .map(|u| {
                let a = u.tanh();
                match mode {
                    Mode::Deterministic => clamp_action(a),
                    Mode::Stochastic => clamp_action(a + (sigma * rng.normal()) as f32),
                }
            })
            .collect()
    }

    pub fn update(&mut self, batch: &Batch) -> Result<UpdateDiagnostics, AgentError> {
        let b = batch.size;
        let discount = self.config.discount as f32;
        let clip = self.config.noise_clip;
        let sigma = self.config.target_noise;

        let next = self.policy_target.forward(&batch.next_obs, b)?;
        let next_act: Vec<f32> = next
            .iter()
            .map(|u| {
                let eps = (sigma * self.rng.normal()).clamp(-clip, clip) as f32;
                (u.tanh() + eps).clamp(-1.0, 1.0)
            })
            .collect();
        let q1 = critic_values(&self.critics.q1_target, &batch.next_obs, &next_act, b)?;
        let q2 = critic_values(&self.critics.q2_target, &batch.next_obs, &next_act, b)?;
        let target: Vec<f32> = (0..b)
            .map(|i| batch.reward[i] + discount * (1.0 - batch.done[i]) * q1[i].min(q2[i]))
            .collect();
        let (critic_loss, mean_q) = self
            .critics
            .step(&batch.obs, &batch.act, &target, b)
            .map_err(|e| self.dump(e))?;

        self.update_count += 1;
        let mut actor_loss = None;
        if self.update_count % self.config.policy_delay == 0 {
            let (loss, grads) = td3_actor_loss(&self.policy, &self.critics.q1, &batch.obs, b)?;
            if !loss.is_finite() {
                return Err(self.dump(AgentError::Diverged(format!("actor loss {loss}"))));
            }
            self.policy_opt
                .step(&mut self.policy.slices_mut(), &grads.slices())
                .map_err(|e| self.dump(e.into()))?;
            let tau = self.config.polyak_tau as f32;
            self.policy_target.polyak_from(&self.policy, tau);
            self.critics.polyak(tau);
            actor_loss = Some(loss);
        }
        Ok(UpdateDiagnostics {
            critic_loss,
            actor_loss,
            alpha: 0.0,
            mean_q,
        })
    }

    fn dump(&self, cause: AgentError) -> AgentError {
        AgentError::Diverged(format!(
            "cause: {cause}\nalgorithm: td3\nupdates: {}\nenv_steps: {}\n\
             policy finite: {}\nq1 finite: {}\nq2 finite: {}",
            self.update_count,
            self.total_env_steps,
            self.policy.all_finite(),
            self.critics.q1.all_finite(),
            self.critics.q2.all_finite(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Agent, Algorithm, ReplayBuffer};
    use super::*;

    #[test]
    fn actor_updates_follow_policy_delay() {
        let cfg = AgentConfig {
            hidden_sizes: vec![8],
            policy_delay: 3,
            ..AgentConfig::desk(Algorithm::Td3)
        };
        let mut agent = Agent::new(cfg, "x", 2, 1, Stream::from_seed(1)).unwrap();
        let mut rng = Stream::from_seed(2);
        let mut rb = ReplayBuffer::new(2, 1, None);
        for _ in 0..50 {
            rb.push(
                &[rng.normal() as f32, 0.5],
                &[0.1],
                1.0,
                &[0.2, rng.normal() as f32],
                false,
            );
        }
        let actor_steps: Vec<bool> = (0..9)
            .map(|_| {
                agent
                    .update(&rb.sample(16, &mut rng))
                    .unwrap()
                    .actor_loss
                    .is_some()
            })
            .collect();
        assert_eq!(
            actor_steps,
            [false, false, true, false, false, true, false, false, true]
        );
    }
}
