//! Comparison methods sharing the IBRL backbone: RLPD+ (TD3 with half of
//! every batch drawn from demos and successful episodes), Pt-Ft (BC
//! pretraining followed by BC-regularized fine-tuning) and SQIL (reward
//! relabelling with a demo/online partition).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::EvalRecord;
use crate::ibrl::{
    run_training, Learner, MetricsRow, Mode, PtFtSettings, ReplayScheme, RunOutput, Schedule, TrainSetup,
    Variant,
};

/// Regularization weights swept by default.
pub const DEFAULT_ALPHAS: [f64; 3] = [0.01, 0.1, 1.0];
pub const DEFAULT_SCHEDULES: [Schedule; 2] = [Schedule::Fixed, Schedule::SoftQFilter];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PtFtConfig {
    pub alpha: f64,
    pub schedule: Schedule,
    /// Start the RL actor from the BC weights.
    pub init_from_bc: bool,
}

impl Default for PtFtConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            schedule: Schedule::Fixed,
            init_from_bc: true,
        }
    }
}

impl PtFtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// All (alpha, schedule) pairs of the default Pt-Ft sweep.
pub fn default_ptft_grid() -> Vec<PtFtConfig> {
    DEFAULT_ALPHAS
        .iter()
        .flat_map(|&alpha| {
            DEFAULT_SCHEDULES.iter().map(move |&schedule| PtFtConfig {
                alpha,
                schedule,
                init_from_bc: true,
            })
        })
        .collect()
}

pub fn rlpd_plus_variant(batch_size: usize) -> Variant {
    Variant {
        mode: Mode::NoIl,
        replay: ReplayScheme::Standard {
            oversample: batch_size / 2,
        },
        actor_reg: None,
        init_actor_from_bc: false,
    }
}

pub fn ptft_variant(config: &PtFtConfig) -> Variant {
    Variant {
        mode: Mode::NoIl,
        replay: ReplayScheme::Standard { oversample: 0 },
        actor_reg: Some(PtFtSettings {
            alpha: config.alpha,
            schedule: config.schedule,
        }),
        init_actor_from_bc: config.init_from_bc,
    }
}

pub fn sqil_variant() -> Variant {
    Variant {
        mode: Mode::NoIl,
        replay: ReplayScheme::SqilPartitions,
        actor_reg: None,
        init_actor_from_bc: false,
    }
}

fn require_demos(setup: &TrainSetup<'_>) -> Result<()> {
    if setup.demos.is_empty() {
        return Err(Error::InsufficientData {
            what: "demonstrations",
            required: 1,
            available: 0,
        });
    }
    Ok(())
}

/// TD3 with `M = N / 2` of each batch from the success index. Never consults
/// a BC policy even if one is supplied.
pub fn train_rlpd_plus(
    setup: &TrainSetup<'_>,
    on_eval: impl FnMut(&MetricsRow, &EvalRecord, &Learner) -> Result<()>,
) -> Result<RunOutput> {
    require_demos(setup)?;
    let setup = TrainSetup { bc: None, ..*setup };
    run_training(&setup, &rlpd_plus_variant(setup.config.batch_size), on_eval)
}

/// TD3 whose actor loss adds `alpha * lambda * mean ||a - pi(s)||^2` over a
/// demo batch, optionally starting from the BC weights.
pub fn train_pt_ft(
    setup: &TrainSetup<'_>,
    config: &PtFtConfig,
    on_eval: impl FnMut(&MetricsRow, &EvalRecord, &Learner) -> Result<()>,
) -> Result<RunOutput> {
    config.validate()?;
    run_training(setup, &ptft_variant(config), on_eval)
}

/// TD3 on demos relabelled to reward 1 and online data relabelled to 0.
pub fn train_sqil(
    setup: &TrainSetup<'_>,
    on_eval: impl FnMut(&MetricsRow, &EvalRecord, &Learner) -> Result<()>,
) -> Result<RunOutput> {
    require_demos(setup)?;
    let setup = TrainSetup { bc: None, ..*setup };
    run_training(&setup, &sqil_variant(), on_eval)
}
