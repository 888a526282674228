use super::{NnError, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a fixed list of parameter buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    /// `slot_lens` gives the length of every parameter buffer, in the order
    /// they will be passed to [`Adam::step`].
    pub fn new(config: AdamConfig, slot_lens: &[usize]) -> Self {
        Self {
            config,
            step_count: 0,
            first_moment: slot_lens.iter().map(|n| vec![T::zero(); *n]).collect(),
            second_moment: slot_lens.iter().map(|n| vec![T::zero(); *n]).collect(),
        }
    }

    pub fn slot_lens(&self) -> Vec<usize> {
        self.first_moment.iter().map(Vec::len).collect()
    }

    /// Applies one update. Gradients are checked for finiteness before any
    /// parameter or moment is touched.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<(), NnError> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(NnError::Shape(format!(
                "optimizer has {} slots, got {} params / {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (slot, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first_moment[slot].len() || g.len() != p.len() {
                return Err(NnError::Shape(format!("slot {slot} length mismatch")));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(NnError::NonFiniteGradient { slot });
            }
        }
        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (lr, eps) = (T::of(c.lr), T::of(c.epsilon));
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[slot];
            let v = &mut self.second_moment[slot];
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
