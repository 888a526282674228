use crate::rng::Stream;

/// A sampled minibatch, row-major.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<f32>,
    pub act: Vec<f32>,
    pub reward: Vec<f32>,
    pub next_obs: Vec<f32>,
    /// 1.0 for health termination; time-limit cuts are stored as 0.0.
    pub done: Vec<f32>,
}

/// Ring buffer of transitions. `capacity = None` grows without bound.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: Option<usize>,
    len: usize,
    write_cursor: usize,
    obs: Vec<f32>,
    act: Vec<f32>,
    reward: Vec<f32>,
    next_obs: Vec<f32>,
    done: Vec<f32>,
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, act_dim: usize, capacity: Option<usize>) -> Self {
        assert!(capacity != Some(0), "replay capacity must be positive");
        Self {
            obs_dim,
            act_dim,
            capacity,
            len: 0,
            write_cursor: 0,
            obs: Vec::new(),
            act: Vec::new(),
            reward: Vec::new(),
            next_obs: Vec::new(),
            done: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn write_cursor(&self) -> usize {
        self.write_cursor
    }

    pub fn push(
        &mut self,
        obs: &[f32],
        act: &[f32],
        reward: f32,
        next_obs: &[f32],
        terminated: bool,
    ) {
        assert_eq!(obs.len(), self.obs_dim);
        assert_eq!(next_obs.len(), self.obs_dim);
        assert_eq!(act.len(), self.act_dim);
        let done = if terminated { 1.0 } else { 0.0 };
        let full = self.capacity.is_some_and(|c| self.len == c);
        if full {
            let i = self.write_cursor;
            let (o, a) = (self.obs_dim, self.act_dim);
            self.obs[i * o..(i + 1) * o].copy_from_slice(obs);
            self.next_obs[i * o..(i + 1) * o].copy_from_slice(next_obs);
            self.act[i * a..(i + 1) * a].copy_from_slice(act);
            self.reward[i] = reward;
            self.done[i] = done;
        } else {
            self.obs.extend_from_slice(obs);
            self.next_obs.extend_from_slice(next_obs);
            self.act.extend_from_slice(act);
            self.reward.push(reward);
            self.done.push(done);
            self.len += 1;
        }
        self.write_cursor += 1;
        if let Some(c) = self.capacity {
            self.write_cursor %= c;
        }
    }

    /// Stored termination flag of slot `i`.
    pub fn done_at(&self, i: usize) -> bool {
        self.done[i] != 0.0
    }

    /// Uniform sampling with replacement.
    pub fn sample(&self, batch: usize, rng: &mut Stream) -> Batch {
        assert!(self.len > 0, "cannot sample from an empty buffer");
        let idx: Vec<usize> = (0..batch).map(|_| rng.below(self.len)).collect();
        self.gather(&idx)
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut b = Batch {
            size: idx.len(),
            obs: Vec::with_capacity(idx.len() * o),
            act: Vec::with_capacity(idx.len() * a),
            reward: Vec::with_capacity(idx.len()),
            next_obs: Vec::with_capacity(idx.len() * o),
            done: Vec::with_capacity(idx.len()),
        };
        for &i in idx {
            b.obs.extend_from_slice(&self.obs[i * o..(i + 1) * o]);
            b.next_obs
                .extend_from_slice(&self.next_obs[i * o..(i + 1) * o]);
            b.act.extend_from_slice(&self.act[i * a..(i + 1) * a]);
            b.reward.push(self.reward[i]);
            b.done.push(self.done[i]);
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_overwrites_oldest() {
        let mut rb = ReplayBuffer::new(1, 1, Some(3));
        for i in 0..5 {
            rb.push(&[i as f32], &[0.0], i as f32, &[0.0], false);
        }
        assert_eq!(rb.len(), 3);
        assert_eq!(rb.write_cursor(), 2);
        let b = rb.gather(&[0, 1, 2]);
        assert_eq!(b.reward, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn unbounded_buffer_keeps_everything() {
        let mut rb = ReplayBuffer::new(2, 1, None);
        for i in 0..10_000 {
            rb.push(&[0.0, 1.0], &[0.5], i as f32, &[1.0, 0.0], i % 2 == 0);
        }
        assert_eq!(rb.len(), 10_000);
        assert!(rb.done_at(0) && !rb.done_at(1));
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut rb = ReplayBuffer::new(1, 1, Some(100));
        for i in 0..50 {
            rb.push(&[i as f32], &[0.0], 0.0, &[0.0], false);
        }
        let a = rb.sample(16, &mut Stream::from_seed(1));
        let b = rb.sample(16, &mut Stream::from_seed(1));
        assert_eq!(a.obs, b.obs);
    }
}
