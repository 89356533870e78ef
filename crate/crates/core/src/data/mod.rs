//! Transitions, trajectories, the replay buffer and demonstration files.

mod buffer;
mod demos;

pub use buffer::{Batch, ReplayBuffer};
pub use demos::{collect_demos, decode_demos, demo_fingerprint, encode_demos, read_demos, write_demos};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Demo,
    Online,
}

/// One environment step. `done` marks a terminal (successful) step; hitting
/// the horizon is a truncation and is stored with `done = false`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>) -> Self {
        Self { transitions }
    }

    /// True when the final transition carries reward 1.
    pub fn success(&self) -> bool {
        self.transitions.last().is_some_and(|t| t.r == 1.0)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}
