use std::collections::VecDeque;

use rand::Rng;

use crate::airspace::OBSERVATION_DIM;
use crate::error::{Error, Result};
use crate::geometry::Vec2;

pub type StateVec = [f64; OBSERVATION_DIM];

/// One `[s, a, r, s', done]` record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: StateVec,
    pub action: Vec2,
    pub reward: f64,
    pub next_state: StateVec,
    pub terminal: bool,
}

/// Bounded FIFO replay memory; the oldest transition is evicted first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
    total_pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("buffer_capacity", "must be at least 1"));
        }
        Ok(Self {
            capacity,
            storage: VecDeque::with_capacity(capacity.min(1 << 16)),
            total_pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Transitions pushed over the buffer's lifetime, evicted ones included.
    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
        self.total_pushed += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    /// `n` uniform draws with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.storage.len() < n || n == 0 {
            return Err(Error::InsufficientSamples {
                size: self.storage.len(),
                requested: n,
            });
        }
        Ok((0..n)
            .map(|_| self.storage[rng.random_range(0..self.storage.len())])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(r: f64) -> Transition {
        Transition {
            state: [r; OBSERVATION_DIM],
            action: Vec2::ZERO,
            reward: r,
            next_state: [0.0; OBSERVATION_DIM],
            terminal: false,
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(2).unwrap();
        b.push(tr(1.0));
        assert_eq!(b.len(), 1);
        b.push(tr(2.0));
        b.push(tr(3.0));
        let rewards: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0]);
        assert_eq!(b.total_pushed(), 3);
    }

    #[test]
    fn sampling_requires_enough_transitions() {
        let mut b = ReplayBuffer::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(b.sample(1, &mut rng).is_err());
        b.push(tr(4.0));
        assert_eq!(b.sample(1, &mut rng).unwrap()[0].reward, 4.0);
        assert!(matches!(
            b.sample(2, &mut rng),
            Err(Error::InsufficientSamples { size: 1, requested: 2 })
        ));
    }

    #[test]
    fn capacity_never_exceeded_under_random_pushes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut b = ReplayBuffer::new(137).unwrap();
        for i in 0..10_000 {
            b.push(tr(i as f64));
            assert!(b.len() <= 137);
            if rng.random_bool(0.01) {
                let _ = b.sample(5.min(b.len()), &mut rng).unwrap();
            }
        }
        assert_eq!(b.iter().next().unwrap().reward, (10_000 - 137) as f64);
    }

    #[test]
    fn seeded_sampling_covers_every_index() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..100 {
            b.push(tr(i as f64));
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100)
                .flat_map(|_| b.sample(100, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        let a = draw(3);
        assert_eq!(a, draw(3));
        let mut seen = [false; 100];
        for t in &a {
            seen[t.reward as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
