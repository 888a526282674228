use super::losses::{sac_actor_loss, sac_target, sample_policy};
use super::{
    clamp_action, normals, AgentConfig, AgentError, Batch, Mode, TwinCritics, UpdateDiagnostics,
};
use crate::nn::{Adam, AdamConfig, Mlp};
use crate::rng::Stream;

/// Soft actor-critic with a tanh-squashed Gaussian policy and twin critics.
#[derive(Clone, Debug, PartialEq)]
pub struct SacAgent {
    pub config: AgentConfig,
    pub env_id: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    /// Outputs `[mean; raw_log_std]`, `2 * act_dim` values per row.
    pub policy: Mlp<f32>,
    pub policy_opt: Adam<f32>,
    pub critics: TwinCritics,
    pub log_alpha: f32,
    pub alpha_opt: Adam<f32>,
    pub rng: Stream,
    pub update_count: u64,
    pub total_env_steps: u64,
}

impl SacAgent {
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
        sizes.push(2 * act_dim);
        let policy = Mlp::new(&sizes, &mut rng);
        let lens: Vec<usize> = policy.slices().iter().map(|s| s.len()).collect();
        let critics = TwinCritics::new(obs_dim + act_dim, &config.hidden_sizes, adam, &mut rng);
        Self {
            env_id: env_id.to_string(),
            obs_dim,
            act_dim,
            policy_opt: Adam::new(adam, &lens),
            policy,
            critics,
            log_alpha: (config.initial_alpha as f32).ln(),
            alpha_opt: Adam::new(adam, &[1]),
            rng,
            update_count: 0,
            total_env_steps: 0,
            config,
        }
    }

    pub fn alpha(&self) -> f32 {
        self.log_alpha.exp()
    }

    pub fn act_rows(&self, obs: &[f32], batch: usize, mode: Mode, rng: &mut Stream) -> Vec<f32> {
        let head = self.policy.forward(obs, batch).expect("observation shape");
        let d = self.act_dim;
        match mode {
            Mode::Deterministic => head
                .chunks_exact(2 * d)
                .flat_map(|row| row[..d].iter().map(|m| clamp_action(m.tanh())))
                .collect(),
            Mode::Stochastic => {
                let noise = normals(rng, batch * d);
                sample_policy(&head, &noise, d)
                    .into_iter()
                    .flat_map(|s| s.action.into_iter().map(clamp_action))
                    .collect()
            }
        }
    }

    pub fn update(&mut self, batch: &Batch) -> Result<UpdateDiagnostics, AgentError> {
        let b = batch.size;
        let d = self.act_dim;
        let alpha = self.alpha();
        let discount = self.config.discount as f32;

        let next_noise = normals(&mut self.rng, b * d);
        let target = sac_target(
            &self.policy,
            &self.critics.q1_target,
            &self.critics.q2_target,
            &batch.next_obs,
            &batch.reward,
            &batch.done,
            &next_noise,
            alpha,
            discount,
            b,
        )?;
        let (critic_loss, mean_q) = self
            .critics
            .step(&batch.obs, &batch.act, &target, b)
            .map_err(|e| self.dump(e))?;

        let noise = normals(&mut self.rng, b * d);
        let actor = sac_actor_loss(
            &self.policy,
            &self.critics.q1,
            &self.critics.q2,
            &batch.obs,
            &noise,
            alpha,
            b,
        )?;
        if !actor.loss.is_finite() {
            return Err(self.dump(AgentError::Diverged(format!("actor loss {}", actor.loss))));
        }
        self.policy_opt
            .step(&mut self.policy.slices_mut(), &actor.grads.slices())
            .map_err(|e| self.dump(e.into()))?;

        if self.config.learn_alpha {
            let target_entropy = -(d as f64);
            let grad = -(actor.mean_log_prob + target_entropy) as f32;
            let mut la = [self.log_alpha];
            self.alpha_opt
                .step(&mut [&mut la], &[&[grad]])
                .map_err(|e| self.dump(e.into()))?;
            self.log_alpha = la[0];
        }

        self.critics.polyak(self.config.polyak_tau as f32);
        self.update_count += 1;
        let diag = UpdateDiagnostics {
            critic_loss,
            actor_loss: Some(actor.loss),
            alpha: f64::from(self.alpha()),
            mean_q,
        };
        if !diag.alpha.is_finite() {
            return Err(self.dump(AgentError::Diverged("alpha".into())));
        }
        Ok(diag)
    }

    fn dump(&self, cause: AgentError) -> AgentError {
        AgentError::Diverged(format!(
            "cause: {cause}\nalgorithm: sac\nupdates: {}\nenv_steps: {}\nlog_alpha: {}\n\
             policy finite: {}\nq1 finite: {}\nq2 finite: {}",
            self.update_count,
            self.total_env_steps,
            self.log_alpha,
            self.policy.all_finite(),
            self.critics.q1.all_finite(),
            self.critics.q2.all_finite(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{Agent, ReplayBuffer};
    use super::*;

    fn filled_buffer(rng: &mut Stream, n: usize) -> ReplayBuffer {
        let mut rb = ReplayBuffer::new(3, 1, None);
        for i in 0..n {
            let o: Vec<f32> = (0..3).map(|_| rng.normal() as f32).collect();
            let o2: Vec<f32> = (0..3).map(|_| rng.normal() as f32).collect();
            rb.push(
                &o,
                &[rng.uniform() as f32 * 2.0 - 1.0],
                rng.normal() as f32,
                &o2,
                i % 17 == 0,
            );
        }
        rb
    }

    #[test]
    fn updates_are_deterministic_and_finite() {
        let run = || {
            let cfg = AgentConfig {
                hidden_sizes: vec![16, 16],
                batch_size: 32,
                ..AgentConfig::desk(super::super::Algorithm::Sac)
            };
            let mut agent = Agent::new(cfg, "x", 3, 1, Stream::from_seed(3)).unwrap();
            let mut rng = Stream::from_seed(4);
            let rb = filled_buffer(&mut rng, 200);
            let mut last = UpdateDiagnostics::default();
            for _ in 0..50 {
                let b = rb.sample(32, &mut rng);
                last = agent.update(&b).unwrap();
            }
            (agent, last)
        };
        let (a, da) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert!(da.critic_loss.is_finite() && da.actor_loss.unwrap().is_finite());
        let Agent::Sac(s) = &a else { unreachable!() };
        assert_ne!(s.critics.q1, s.critics.q1_target);
    }
}
