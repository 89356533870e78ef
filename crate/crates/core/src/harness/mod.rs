//! Run configuration, evaluation, per-run outputs and seeded sweeps.

pub mod config;
mod eval;
pub mod pipeline;
pub mod sweep;

pub use config::{Algo, RunConfig};
pub use eval::{evaluate, EvalRecord};
pub use pipeline::{prepare_bc, prepare_demos, run_algo, run_experiment, RunSummary};
pub use sweep::{run_sweep, SweepSpec};
