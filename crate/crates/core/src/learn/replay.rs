//! Uniform replay buffer with ring overwrite.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// Normalized residual action in `[-1, 1]`.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

/// Column-stacked sample.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub not_done: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Batch {
        let idx = self.sample_indices(n, rng);
        let mut b = Batch {
            size: n,
            ..Batch::default()
        };
        for i in idx {
            let t = &self.items[i];
            b.obs.extend_from_slice(&t.obs);
            b.action.extend_from_slice(&t.action);
            b.reward.push(t.reward);
            b.next_obs.extend_from_slice(&t.next_obs);
            b.not_done.push(if t.done { 0.0 } else { 1.0 });
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(i: usize) -> Transition {
        Transition {
            obs: vec![i as f64],
            action: vec![0.0],
            reward: i as f64,
            next_obs: vec![0.0],
            done: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(tr(i));
        }
        let mut r: Vec<f64> = (0..3).map(|i| b.get(i).reward).collect();
        r.sort_by(f64::total_cmp);
        assert_eq!(r, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..100 {
            b.push(tr(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 100_000;
        let mut counts = [0usize; 100];
        for i in b.sample_indices(draws, &mut rng) {
            counts[i] += 1;
        }
        let expected = draws as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99 degrees of freedom, 1% upper tail.
        assert!(chi2 < 134.64, "chi2 {chi2}");
    }
}
