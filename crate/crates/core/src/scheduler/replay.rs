use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::Rng;

use super::state::{Action, AgentState};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: AgentState,
    pub action: Action,
    pub reward: f64,
    pub next_state: AgentState,
}

/// Bounded FIFO memory of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Experience>,
    capacity: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("replay_capacity", "must be >= 1"));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity),
            capacity,
            inserted: 0,
        })
    }

    pub fn push(&mut self, experience: Experience) -> Result<()> {
        if !experience.reward.is_finite() {
            return Err(invalid("reward", "must be finite"));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(experience);
        self.inserted += 1;
        Ok(())
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

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// `batch_size` distinct experiences chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Experience>> {
        if batch_size > self.items.len() || batch_size == 0 {
            return Err(Error::InsufficientSamples {
                available: self.items.len(),
                requested: batch_size,
            });
        }
        Ok(sample(rng, self.items.len(), batch_size)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn exp(r: f64) -> Experience {
        Experience {
            state: AgentState::Initial,
            action: Action::IDLE,
            reward: r,
            next_state: AgentState::Initial,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for r in 0..4 {
            b.push(exp(f64::from(r))).unwrap();
        }
        let rewards: Vec<f64> = b.iter().map(|e| e.reward).collect();
        assert_eq!(rewards, vec![1.0, 2.0, 3.0]);
        assert_eq!(b.inserted(), 4);
    }

    #[test]
    fn full_batch_is_permutation() {
        let mut b = ReplayBuffer::new(10).unwrap();
        for r in 0..6 {
            b.push(exp(f64::from(r))).unwrap();
        }
        let mut rng = substream(0, 0, 0);
        let mut got: Vec<f64> = b.sample(6, &mut rng).unwrap().iter().map(|e| e.reward).collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn insufficient_and_invalid() {
        let mut b = ReplayBuffer::new(2).unwrap();
        b.push(exp(1.0)).unwrap();
        let mut rng = substream(0, 0, 0);
        assert!(matches!(b.sample(2, &mut rng), Err(Error::InsufficientSamples { available: 1, requested: 2 })));
        assert!(b.push(exp(f64::NAN)).is_err());
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(8).unwrap();
        for r in 0..8 {
            b.push(exp(f64::from(r))).unwrap();
        }
        let mut rng = substream(3, 0, 0);
        let mut counts = [0usize; 8];
        let draws = 10_000;
        for _ in 0..draws {
            counts[b.sample(1, &mut rng).unwrap()[0].reward as usize] += 1;
        }
        let e = draws as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99% quantile, 7 degrees of freedom
        assert!(chi2 < 18.475, "{counts:?}");
    }

    #[test]
    fn same_rng_same_batch() {
        let mut b = ReplayBuffer::new(50).unwrap();
        for r in 0..50 {
            b.push(exp(f64::from(r))).unwrap();
        }
        let a: Vec<f64> = b.sample(8, &mut substream(9, 0, 0)).unwrap().iter().map(|e| e.reward).collect();
        let c: Vec<f64> = b.sample(8, &mut substream(9, 0, 0)).unwrap().iter().map(|e| e.reward).collect();
        assert_eq!(a, c);
    }
}
