use crate::RngStream;

/// A minibatch of stored transitions, row-major over observations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub obs_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    /// Terminal for learning purposes: no bootstrap from `next_obs`.
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn new(obs_dim: usize) -> Self {
        Self {
            obs_dim,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push(&mut self, obs: &[f64], action: usize, reward: f64, next_obs: &[f64], done: bool) {
        assert_eq!(obs.len(), self.obs_dim);
        assert_eq!(next_obs.len(), self.obs_dim);
        self.obs.extend_from_slice(obs);
        self.actions.push(action);
        self.rewards.push(reward);
        self.next_obs.extend_from_slice(next_obs);
        self.dones.push(done);
    }
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
///
/// Storage grows on demand up to `capacity`, after which the oldest entry
/// is overwritten.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    cursor: usize,
    data: Batch,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            cursor: 0,
            data: Batch::new(obs_dim),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Slot the next push writes to.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn push(&mut self, obs: &[f64], action: usize, reward: f64, next_obs: &[f64], done: bool) {
        let d = self.data.obs_dim;
        if self.data.len() < self.capacity {
            self.data.push(obs, action, reward, next_obs, done);
        } else {
            let i = self.cursor;
            self.data.obs[i * d..(i + 1) * d].copy_from_slice(obs);
            self.data.next_obs[i * d..(i + 1) * d].copy_from_slice(next_obs);
            self.data.actions[i] = action;
            self.data.rewards[i] = reward;
            self.data.dones[i] = done;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn sample_indices(&self, batch: usize, stream: &mut RngStream) -> Vec<usize> {
        assert!(!self.is_empty(), "sampling from an empty buffer");
        (0..batch).map(|_| stream.below(self.len())).collect()
    }

    pub fn gather(&self, indices: &[usize]) -> Batch {
        let d = self.data.obs_dim;
        let mut out = Batch::new(d);
        for &i in indices {
            out.push(
                &self.data.obs[i * d..(i + 1) * d],
                self.data.actions[i],
                self.data.rewards[i],
                &self.data.next_obs[i * d..(i + 1) * d],
                self.data.dones[i],
            );
        }
        out
    }

    pub fn sample(&self, batch: usize, stream: &mut RngStream) -> Batch {
        self.gather(&self.sample_indices(batch, stream))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_overwrites_oldest() {
        let mut rb = ReplayBuffer::new(3, 1);
        for i in 0..5 {
            rb.push(&[i as f64], i, i as f64, &[0.0], false);
        }
        assert_eq!(rb.len(), 3);
        let all = rb.gather(&[0, 1, 2]);
        assert_eq!(all.actions, vec![3, 4, 2]);
        assert_eq!(rb.cursor(), 2);
    }

    #[test]
    fn sampling_is_seeded() {
        let mut rb = ReplayBuffer::new(100, 2);
        for i in 0..100 {
            rb.push(&[i as f64, 0.0], 0, 0.0, &[0.0, 0.0], false);
        }
        let a = rb.sample(16, &mut RngStream::new(2));
        let b = rb.sample(16, &mut RngStream::new(2));
        assert_eq!(a, b);
    }
}
