//! TD3 with a critic ensemble and the two imitation-bootstrapping
//! mechanisms: the frozen BC policy proposes an alternative action when
//! acting (actor proposal) and when forming bootstrap targets (bootstrap
//! proposal). The Q-ensemble decides between the candidates in both places.

mod learner;
mod train;

pub use learner::{
    ActMode, ActorLoss, ActorRegularizer, Choice, Counters, CriticEnsemble, CriticMember, Learner, Net,
    Selection, Td3Actor,
};
pub use train::{
    run_training, train, MetricsRow, PtFtSettings, Replay, ReplayScheme, RunOutput, Schedule, TrainSetup,
    Variant,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which imitation proposals are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    #[default]
    /// Actor proposal and bootstrap proposal.
    Full,
    /// IL action offered only while acting; targets use the RL candidate alone.
    ActorProposalOnly,
    /// Vanilla TD3.
    NoIl,
}

impl Mode {
    pub fn uses_il_when_acting(self) -> bool {
        self != Mode::NoIl
    }

    pub fn uses_il_in_targets(self) -> bool {
        self == Mode::Full
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IbrlConfig {
    pub num_critics: usize,
    pub critic_updates: usize,
    pub exploration_std: f64,
    pub noise_clip: f64,
    pub ema: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub oversample: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub depth: usize,
    pub layer_norm: bool,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub total_steps: usize,
    pub buffer_capacity: usize,
    /// Set from the algorithm name rather than configured directly.
    #[serde(skip)]
    pub mode: Mode,
}

impl Default for IbrlConfig {
    fn default() -> Self {
        Self {
            num_critics: 5,
            critic_updates: 5,
            exploration_std: 0.1,
            noise_clip: 0.3,
            ema: 0.99,
            discount: 0.99,
            batch_size: 256,
            oversample: 0,
            dropout: 0.5,
            learning_rate: 1e-4,
            hidden_dim: 256,
            depth: 3,
            layer_norm: true,
            eval_every: 2_000,
            eval_episodes: 20,
            total_steps: 50_000,
            buffer_capacity: 1_000_000,
            mode: Mode::Full,
        }
    }
}

impl IbrlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.critic_updates < 1 {
            return bad("critic_updates (G) must be >= 1".into());
        }
        if self.num_critics < 2 {
            return bad("num_critics (E) must be >= 2".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.oversample > self.batch_size {
            return bad(format!(
                "oversample (M = {}) exceeds batch_size (N = {})",
                self.oversample, self.batch_size
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.ema) || !(0.0..=1.0).contains(&self.discount) {
            return bad("ema and discount must lie in [0, 1]".into());
        }
        if self.exploration_std < 0.0 || self.noise_clip < 0.0 {
            return bad("exploration_std and noise_clip must be non-negative".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be finite and positive, got {}",
                self.learning_rate
            ));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if self.buffer_capacity == 0 || self.depth == 0 || self.hidden_dim == 0 {
            return bad("buffer_capacity, depth and hidden_dim must be positive".into());
        }
        Ok(())
    }
}
