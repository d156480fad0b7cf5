use ndarray::Array2;
use rand::Rng as _;

use super::DdpgError;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// True termination (not horizon truncation).
    pub done: bool,
}

/// Row-stacked minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl MiniBatch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self, DdpgError> {
        let first = items.first().ok_or(DdpgError::EmptyBatch)?;
        let (n, sd, ad) = (items.len(), first.state.len(), first.action.len());
        let stack = |f: &dyn Fn(&Transition) -> &[f64], d: usize| -> Result<Array2<f64>, DdpgError> {
            let data: Vec<f64> = items.iter().flat_map(|t| f(t).iter().copied()).collect();
            Array2::from_shape_vec((n, d), data).map_err(|_| DdpgError::InconsistentTransition)
        };
        Ok(Self {
            states: stack(&|t| &t.state, sd)?,
            actions: stack(&|t| &t.action, ad)?,
            rewards: items.iter().map(|t| t.reward).collect(),
            next_states: stack(&|t| &t.next_state, sd)?,
            dones: items.iter().map(|t| t.done).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Fixed-capacity FIFO store; once full, each push overwrites the oldest item.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next push writes when full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, DdpgError> {
        if capacity == 0 {
            return Err(DdpgError::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            items: Vec::new(),
            cursor: 0,
        })
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
            self.items[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    /// Stored items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.cursor);
        older.iter().chain(newer)
    }

    /// `n` items drawn uniformly with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<MiniBatch, DdpgError> {
        if n == 0 || self.items.len() < n {
            return Err(DdpgError::InsufficientReplay {
                have: self.items.len(),
                need: n,
            });
        }
        let picks: Vec<&Transition> = (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect();
        MiniBatch::from_transitions(&picks)
    }
}
