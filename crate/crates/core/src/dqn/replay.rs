use rand::Rng;

use crate::env::ActionMask;

/// One stored transition with encoded states.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    pub cost: f64,
    pub next_state: Vec<f64>,
    /// Feasible actions of `next_state`.
    pub next_mask: ActionMask,
}

/// Fixed-capacity ring buffer; once full, the oldest experience is overwritten.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Experience>,
    cursor: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayMemory {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Experience {
        &self.items[i]
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() < self.capacity {
            self.items.push(e);
        } else {
            self.items[self.cursor] = e;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Indices of `n` experiences drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling from an empty replay memory");
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }
}
