//! Fixed-capacity ring buffer of transitions with uniform sampling.

use rand::seq::index;
use rand::Rng;

use crate::error::{invalid, Result};

/// One `(s, a, r, s')` tuple; states are stored as normalised observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("replay_capacity", "must be at least 1"));
        }
        Ok(Self {
            capacity,
            storage: Vec::new(),
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `count` distinct stored indices, uniformly at random.
    pub fn sample_indices<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<usize>> {
        if count > self.storage.len() {
            return Err(invalid(
                "minibatch_size",
                format!("cannot draw {count} from {}", self.storage.len()),
            ));
        }
        Ok(index::sample(rng, self.storage.len(), count).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(count, rng)?
            .into_iter()
            .map(|i| &self.storage[i])
            .collect())
    }
}
