//! Central finite differences over network parameters.

use super::{Mlp, Real};

/// Numeric gradient of `loss` with respect to every parameter of `net`.
pub fn numeric_gradient<T: Real>(
    net: &Mlp<T>,
    h: f64,
    mut loss: impl FnMut(&Mlp<T>) -> f64,
) -> Mlp<T> {
    let mut probe = net.clone();
    let mut out = net.zeros_like();
    let n_slots = net.slices().len();
    for slot in 0..n_slots {
        for j in 0..net.slices()[slot].len() {
            let orig = probe.slices()[slot][j];
            // the step actually taken after rounding to T
            let up = orig + T::of(h);
            let down = orig - T::of(h);
            probe.slices_mut()[slot][j] = up;
            let lp = loss(&probe);
            probe.slices_mut()[slot][j] = down;
            let lm = loss(&probe);
            probe.slices_mut()[slot][j] = orig;
            out.slices_mut()[slot][j] = T::of((lp - lm) / (up - down).f64());
        }
    }
    out
}

/// `|a - b| / max(|a|, |b|)` over the flattened parameter vectors.
pub fn relative_error<T: Real>(a: &Mlp<T>, b: &Mlp<T>) -> f64 {
    let (mut diff, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (sa, sb) in a.slices().iter().zip(b.slices()) {
        for (x, y) in sa.iter().zip(sb) {
            let (x, y) = (x.f64(), y.f64());
            diff += (x - y) * (x - y);
            na += x * x;
            nb += y * y;
        }
    }
    let scale = na.sqrt().max(nb.sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

/// Relative errors of the analytic loss gradients on one random instance.
#[derive(Clone, Copy, Debug)]
pub struct LossCheck {
    pub critic: f64,
    pub sac_actor: f64,
    pub td3_actor: f64,
}

impl LossCheck {
    pub fn max(&self) -> f64 {
        self.critic.max(self.sac_actor).max(self.td3_actor)
    }
}

/// Builds a tiny actor and critic pair from `seed` and compares the analytic
/// critic and actor gradients at precision `T` against central differences
/// with step `h`.
pub fn check_losses<T: Real>(seed: u64, h: f64) -> LossCheck {
    use crate::agent::losses::{critic_loss, sac_actor_loss, td3_actor_loss};
    use crate::rng::Stream;

    let mut rng = Stream::from_seed(seed);
    let obs_dim = 2 + rng.below(3);
    let act_dim = 1 + rng.below(2);
    let hidden = 3 + rng.below(4);
    let batch = 1 + rng.below(4);
    let draw =
        |n: usize, rng: &mut Stream| -> Vec<T> { (0..n).map(|_| T::of(rng.normal())).collect() };
    let policy = Mlp::<T>::new(&[obs_dim, hidden, hidden, 2 * act_dim], &mut rng);
    let q1 = Mlp::<T>::new(&[obs_dim + act_dim, hidden, hidden, 1], &mut rng);
    let q2 = Mlp::<T>::new(&[obs_dim + act_dim, hidden, hidden, 1], &mut rng);
    let obs = draw(batch * obs_dim, &mut rng);
    let act = draw(batch * act_dim, &mut rng);
    let target = draw(batch, &mut rng);
    let noise = draw(batch * act_dim, &mut rng);
    let alpha = T::of(0.05 + 0.3 * rng.uniform());

    // differences are always taken in f64 so that at 32 bit only the
    // analytic side carries rounding
    let up = |v: &[T]| -> Vec<f64> { v.iter().map(|x| x.f64()).collect() };
    let (obs64, act64, target64, noise64) = (up(&obs), up(&act), up(&target), up(&noise));
    let (q1_64, q2_64, alpha64) = (q1.cast::<f64>(), q2.cast::<f64>(), alpha.f64());

    let c = critic_loss(&q1, &obs, &act, &target, batch).expect("shapes");
    let c_fd = numeric_gradient(&q1_64, h, |n| {
        critic_loss(n, &obs64, &act64, &target64, batch)
            .expect("shapes")
            .loss
    });
    let a = sac_actor_loss(&policy, &q1, &q2, &obs, &noise, alpha, batch).expect("shapes");
    let a_fd = numeric_gradient(&policy.cast::<f64>(), h, |n| {
        sac_actor_loss(n, &q1_64, &q2_64, &obs64, &noise64, alpha64, batch)
            .expect("shapes")
            .loss
    });
    let det = Mlp::<T>::new(&[obs_dim, hidden, hidden, act_dim], &mut rng);
    let (_, t) = td3_actor_loss(&det, &q1, &obs, batch).expect("shapes");
    let t_fd = numeric_gradient(&det.cast::<f64>(), h, |n| {
        td3_actor_loss(n, &q1_64, &obs64, batch).expect("shapes").0
    });
    LossCheck {
        critic: relative_error(&c.grads.cast::<f64>(), &c_fd),
        sac_actor: relative_error(&a.grads.cast::<f64>(), &a_fd),
        td3_actor: relative_error(&t.cast::<f64>(), &t_fd),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_gradients_match_at_64_bit() {
        for seed in 0..50 {
            let c = check_losses::<f64>(seed, 1e-6);
            assert!(c.max() < 1e-6, "seed {seed}: {c:?}");
        }
    }

    #[test]
    fn loss_gradients_match_at_32_bit() {
        for seed in 0..50 {
            let c = check_losses::<f32>(seed, 1e-6);
            assert!(c.max() < 1e-2, "seed {seed}: {c:?}");
        }
    }
}
