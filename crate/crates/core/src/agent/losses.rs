//! Actor and critic objectives with their analytic gradients.
//!
//! Generic over [`Real`] so gradient checks can run at 64-bit. Losses are
//! batch means accumulated in `f64` in row order.

use crate::nn::{squashed_gaussian_backward, squashed_gaussian_sample, Mlp, NnError, Real};

/// Row-wise concatenation `[a_i, b_i]`.
pub fn concat_rows<T: Real>(a: &[T], a_dim: usize, b: &[T], b_dim: usize, batch: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), a_dim * batch);
    debug_assert_eq!(b.len(), b_dim * batch);
    let mut out = Vec::with_capacity((a_dim + b_dim) * batch);
    for i in 0..batch {
        out.extend_from_slice(&a[i * a_dim..(i + 1) * a_dim]);
        out.extend_from_slice(&b[i * b_dim..(i + 1) * b_dim]);
    }
    out
}

/// Q values of a critic on `(obs, act)` rows.
pub fn critic_values<T: Real>(
    critic: &Mlp<T>,
    obs: &[T],
    act: &[T],
    batch: usize,
) -> Result<Vec<T>, NnError> {
    let obs_dim = obs.len() / batch.max(1);
    let act_dim = act.len() / batch.max(1);
    critic.forward(&concat_rows(obs, obs_dim, act, act_dim, batch), batch)
}

#[derive(Clone, Debug)]
pub struct CriticLoss<T> {
    pub loss: f64,
    pub grads: Mlp<T>,
    pub mean_q: f64,
}

/// Mean squared error `mean((Q(s, a) - y)^2)` against fixed targets.
pub fn critic_loss<T: Real>(
    critic: &Mlp<T>,
    obs: &[T],
    act: &[T],
    target: &[T],
    batch: usize,
) -> Result<CriticLoss<T>, NnError> {
    let obs_dim = obs.len() / batch;
    let act_dim = act.len() / batch;
    let input = concat_rows(obs, obs_dim, act, act_dim, batch);
    let cache = critic.forward_cached(&input, batch)?;
    let q = cache.output();
    let inv_b = T::of(1.0 / batch as f64);
    let mut loss = 0.0f64;
    let mut mean_q = 0.0f64;
    let mut out_grad = Vec::with_capacity(batch);
    for (qi, yi) in q.iter().zip(target) {
        let diff = *qi - *yi;
        loss += diff.f64() * diff.f64();
        mean_q += qi.f64();
        out_grad.push(T::of(2.0) * diff * inv_b);
    }
    let (grads, _) = critic.backward(&cache, &out_grad)?;
    Ok(CriticLoss {
        loss: loss / batch as f64,
        grads,
        mean_q: mean_q / batch as f64,
    })
}

/// Draws squashed-Gaussian actions for every row of policy head outputs.
pub fn sample_policy<T: Real>(
    head: &[T],
    noise: &[T],
    act_dim: usize,
) -> Vec<crate::nn::SquashedSample<T>> {
    head.chunks_exact(2 * act_dim)
        .zip(noise.chunks_exact(act_dim))
        .map(|(row, eps)| squashed_gaussian_sample(&row[..act_dim], &row[act_dim..], eps))
        .collect()
}

/// Soft Bellman target
/// `y = r + discount * (1 - done) * (min Q_targ(s', a') - alpha * log pi(a'|s'))`
/// with `a' ~ pi(.|s')` drawn from `noise`.
#[allow(clippy::too_many_arguments)]
pub fn sac_target<T: Real>(
    policy: &Mlp<T>,
    q1_target: &Mlp<T>,
    q2_target: &Mlp<T>,
    next_obs: &[T],
    reward: &[T],
    done: &[T],
    noise: &[T],
    alpha: T,
    discount: T,
    batch: usize,
) -> Result<Vec<T>, NnError> {
    let act_dim = noise.len() / batch;
    let head = policy.forward(next_obs, batch)?;
    let samples = sample_policy(&head, noise, act_dim);
    let next_act: Vec<T> = samples
        .iter()
        .flat_map(|s| s.action.iter().copied())
        .collect();
    let q1 = critic_values(q1_target, next_obs, &next_act, batch)?;
    let q2 = critic_values(q2_target, next_obs, &next_act, batch)?;
    Ok((0..batch)
        .map(|i| {
            let soft = q1[i].min(q2[i]) - alpha * samples[i].log_prob;
            reward[i] + discount * (T::one() - done[i]) * soft
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct ActorLoss<T> {
    pub loss: f64,
    pub grads: Mlp<T>,
    pub mean_log_prob: f64,
}

/// `mean(alpha * log pi(a|s) - min(Q1, Q2)(s, a))`, `a = tanh(mean + std * noise)`.
#[allow(clippy::too_many_arguments)]
pub fn sac_actor_loss<T: Real>(
    policy: &Mlp<T>,
    q1: &Mlp<T>,
    q2: &Mlp<T>,
    obs: &[T],
    noise: &[T],
    alpha: T,
    batch: usize,
) -> Result<ActorLoss<T>, NnError> {
    let obs_dim = obs.len() / batch;
    let act_dim = noise.len() / batch;
    let pcache = policy.forward_cached(obs, batch)?;
    let samples = sample_policy(pcache.output(), noise, act_dim);
    let act: Vec<T> = samples
        .iter()
        .flat_map(|s| s.action.iter().copied())
        .collect();
    let input = concat_rows(obs, obs_dim, &act, act_dim, batch);
    let c1 = q1.forward_cached(&input, batch)?;
    let c2 = q2.forward_cached(&input, batch)?;
    let inv_b = T::of(1.0 / batch as f64);

    let mut loss = 0.0f64;
    let mut mean_log_prob = 0.0f64;
    let mut g1 = vec![T::zero(); batch];
    let mut g2 = vec![T::zero(); batch];
    for i in 0..batch {
        let (a, b) = (c1.output()[i], c2.output()[i]);
        let q_min = if a <= b {
            g1[i] = -inv_b;
            a
        } else {
            g2[i] = -inv_b;
            b
        };
        loss += (alpha * samples[i].log_prob - q_min).f64();
        mean_log_prob += samples[i].log_prob.f64();
    }
    let dx1 = q1.input_gradient(&c1, &g1)?;
    let dx2 = q2.input_gradient(&c2, &g2)?;

    let width = obs_dim + act_dim;
    let mut head_grad = Vec::with_capacity(batch * 2 * act_dim);
    for (i, s) in samples.iter().enumerate() {
        let d_act: Vec<T> = (0..act_dim)
            .map(|j| dx1[i * width + obs_dim + j] + dx2[i * width + obs_dim + j])
            .collect();
        let (dm, dls) = squashed_gaussian_backward(s, &d_act, alpha * inv_b);
        head_grad.extend(dm);
        head_grad.extend(dls);
    }
    let (grads, _) = policy.backward(&pcache, &head_grad)?;
    Ok(ActorLoss {
        loss: loss / batch as f64,
        grads,
        mean_log_prob: mean_log_prob / batch as f64,
    })
}

/// Deterministic-policy objective `-mean(Q1(s, tanh(pi(s))))`.
pub fn td3_actor_loss<T: Real>(
    policy: &Mlp<T>,
    q1: &Mlp<T>,
    obs: &[T],
    batch: usize,
) -> Result<(f64, Mlp<T>), NnError> {
    let obs_dim = obs.len() / batch;
    let pcache = policy.forward_cached(obs, batch)?;
    let act_dim = policy.output_dim();
    let act: Vec<T> = pcache.output().iter().map(|u| u.tanh()).collect();
    let c1 = q1.forward_cached(&concat_rows(obs, obs_dim, &act, act_dim, batch), batch)?;
    let inv_b = T::of(1.0 / batch as f64);
    let loss = -c1.output().iter().map(|q| q.f64()).sum::<f64>() / batch as f64;
    let dx = q1.input_gradient(&c1, &vec![-inv_b; batch])?;
    let width = obs_dim + act_dim;
    let mut out_grad = Vec::with_capacity(batch * act_dim);
    for i in 0..batch {
        for j in 0..act_dim {
            let a = act[i * act_dim + j];
            out_grad.push(dx[i * width + obs_dim + j] * (T::one() - a * a));
        }
    }
    let (grads, _) = policy.backward(&pcache, &out_grad)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn terminal_rows_do_not_bootstrap() {
        let mut rng = Stream::from_seed(3);
        let policy = Mlp::<f32>::new(&[3, 8, 2], &mut rng);
        let q1 = Mlp::<f32>::new(&[4, 8, 1], &mut rng);
        let q2 = Mlp::<f32>::new(&[4, 8, 1], &mut rng);
        let next_obs: Vec<f32> = (0..6).map(|_| rng.normal() as f32).collect();
        let y = sac_target(
            &policy,
            &q1,
            &q2,
            &next_obs,
            &[0.7, -1.3],
            &[1.0, 0.0],
            &[0.3, -0.2],
            0.2,
            0.99,
            2,
        )
        .unwrap();
        assert_eq!(y[0], 0.7);
        assert_ne!(y[1], -1.3);
    }

    #[test]
    fn critic_loss_is_invariant_to_row_order() {
        let mut rng = Stream::from_seed(4);
        let q = Mlp::<f32>::new(&[5, 16, 16, 1], &mut rng);
        let b = 64;
        let obs: Vec<f32> = (0..b * 3).map(|_| rng.normal() as f32).collect();
        let act: Vec<f32> = (0..b * 2).map(|_| rng.normal() as f32).collect();
        let y: Vec<f32> = (0..b).map(|_| rng.normal() as f32).collect();
        let base = critic_loss(&q, &obs, &act, &y, b).unwrap().loss;
        let mut perm: Vec<usize> = (0..b).collect();
        perm.reverse();
        perm.swap(3, 40);
        let pick = |v: &[f32], d: usize| -> Vec<f32> {
            perm.iter()
                .flat_map(|&i| v[i * d..(i + 1) * d].to_vec())
                .collect()
        };
        let permuted = critic_loss(&q, &pick(&obs, 3), &pick(&act, 2), &pick(&y, 1), b)
            .unwrap()
            .loss;
        assert!((base - permuted).abs() <= 1e-6 * base.abs());
    }
}
