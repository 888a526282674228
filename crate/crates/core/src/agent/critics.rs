use super::losses::{concat_rows, critic_loss};
use super::AgentError;
use crate::nn::{Adam, AdamConfig, Mlp};
use crate::rng::Stream;

/// Twin Q networks with Polyak-averaged targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TwinCritics {
    pub q1: Mlp<f32>,
    pub q2: Mlp<f32>,
    pub q1_target: Mlp<f32>,
    pub q2_target: Mlp<f32>,
    pub q1_opt: Adam<f32>,
    pub q2_opt: Adam<f32>,
}

impl TwinCritics {
    pub fn new(input_dim: usize, hidden: &[usize], adam: AdamConfig, rng: &mut Stream) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let q1 = Mlp::new(&sizes, rng);
        let q2 = Mlp::new(&sizes, rng);
        let lens: Vec<usize> = q1.slices().iter().map(|s| s.len()).collect();
        Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            q1_opt: Adam::new(adam, &lens),
            q2_opt: Adam::new(adam, &lens),
        }
    }

    pub fn min_q(&self, obs: &[f32], act: &[f32], batch: usize) -> Vec<f32> {
        let obs_dim = obs.len() / batch;
        let act_dim = act.len() / batch;
        let input = concat_rows(obs, obs_dim, act, act_dim, batch);
        let a = self.q1.forward(&input, batch).expect("critic input shape");
        let b = self.q2.forward(&input, batch).expect("critic input shape");
        a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect()
    }

    pub fn target_min_q(&self, obs: &[f32], act: &[f32], batch: usize) -> Vec<f32> {
        let obs_dim = obs.len() / batch;
        let act_dim = act.len() / batch;
        let input = concat_rows(obs, obs_dim, act, act_dim, batch);
        let a = self
            .q1_target
            .forward(&input, batch)
            .expect("critic input shape");
        let b = self
            .q2_target
            .forward(&input, batch)
            .expect("critic input shape");
        a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect()
    }

    /// One gradient step of both critics toward `target`. Returns the summed
    /// loss and mean Q1.
    pub fn step(
        &mut self,
        obs: &[f32],
        act: &[f32],
        target: &[f32],
        batch: usize,
    ) -> Result<(f64, f64), AgentError> {
        let l1 = critic_loss(&self.q1, obs, act, target, batch)?;
        let l2 = critic_loss(&self.q2, obs, act, target, batch)?;
        let loss = l1.loss + l2.loss;
        if !loss.is_finite() {
            return Err(AgentError::Diverged(format!(
                "critic loss {} + {}",
                l1.loss, l2.loss
            )));
        }
        self.q1_opt
            .step(&mut self.q1.slices_mut(), &l1.grads.slices())?;
        self.q2_opt
            .step(&mut self.q2.slices_mut(), &l2.grads.slices())?;
        Ok((loss, l1.mean_q))
    }

    pub fn polyak(&mut self, tau: f32) {
        self.q1_target.polyak_from(&self.q1, tau);
        self.q2_target.polyak_from(&self.q2, tau);
    }
}
