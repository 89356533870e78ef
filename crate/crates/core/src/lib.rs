//! Imitation-bootstrapped reinforcement learning on sparse-reward toy tasks.
//!
//! A TD3 learner with a critic ensemble queries a frozen behavior-cloned
//! policy for a second candidate action, both when acting and when forming
//! bootstrap targets. The crate also carries the comparison methods (RLPD+,
//! pretrain/finetune, SQIL), the environments and demonstration tooling they
//! train on, and a harness for seeded runs and sweeps.

pub mod baselines;
pub mod data;
pub mod envs;
pub mod error;
pub mod exec;
pub mod harness;
pub mod ibrl;
pub mod imitation;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
