//! The interaction/update loop shared by IBRL and every baseline. Variants
//! differ only in how minibatches are drawn, which rewards are stored, the
//! actor-loss augmentation and actor initialization.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, ReplayBuffer, Source, Trajectory, Transition};
use crate::envs::{self, EnvSpec};
use crate::error::{Error, Result};
use crate::harness::{evaluate, EvalRecord};
use crate::ibrl::{ActMode, ActorRegularizer, Choice, IbrlConfig, Learner, Mode, Td3Actor};
use crate::imitation::BcPolicy;
use crate::numerics::Tensor;
use crate::rng::{self, streams};

/// Replay organization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ReplayScheme {
    /// One buffer seeded with demos; `oversample` of every batch comes from
    /// the success index (demos plus successful online episodes).
    Standard { oversample: usize },
    /// Demo partition relabelled to reward 1, online partition relabelled to
    /// reward 0, batches split half and half.
    SqilPartitions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// lambda = 1.
    Fixed,
    /// lambda = fraction of batch states where the BC action outscores the actor.
    SoftQFilter,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PtFtSettings {
    pub alpha: f64,
    pub schedule: Schedule,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Variant {
    pub mode: Mode,
    pub replay: ReplayScheme,
    pub actor_reg: Option<PtFtSettings>,
    pub init_actor_from_bc: bool,
}

impl Variant {
    pub fn ibrl(config: &IbrlConfig) -> Self {
        Self {
            mode: config.mode,
            replay: ReplayScheme::Standard {
                oversample: config.oversample,
            },
            actor_reg: None,
            init_actor_from_bc: false,
        }
    }

    fn needs_bc(&self) -> bool {
        self.mode.uses_il_when_acting() || self.actor_reg.is_some() || self.init_actor_from_bc
    }
}

pub struct TrainSetup<'a> {
    pub config: &'a IbrlConfig,
    pub env: &'a EnvSpec,
    pub bc: Option<&'a BcPolicy>,
    pub demos: &'a [Trajectory],
    pub seed: u64,
    /// Record elapsed wall-clock time in the metrics (otherwise 0, which keeps
    /// the metrics byte-identical across reruns).
    pub log_wall_clock: bool,
}

/// One row of `metrics.csv`, written at every evaluation point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub eval_success: f64,
    pub il_action_fraction: f64,
    /// Mean critic loss over updates since the previous row (NaN if none).
    pub critic_loss: f64,
    /// Mean actor loss over updates since the previous row (NaN if none).
    pub actor_loss: f64,
    /// Mean return of training episodes finished since the previous row (NaN if none).
    pub episode_return: f64,
    pub wall_ms: u64,
}

pub struct RunOutput {
    pub metrics: Vec<MetricsRow>,
    pub evals: Vec<EvalRecord>,
    pub learner: Learner,
    pub replay: Replay,
    /// Training-time fraction of steps whose executed action came from IL.
    pub train_il_fraction: f64,
    pub successful_episodes: usize,
}

/// Replay storage of a run.
pub enum Replay {
    Standard(ReplayBuffer),
    Sqil {
        demo: ReplayBuffer,
        online: ReplayBuffer,
    },
}

impl Replay {
    pub fn len(&self) -> usize {
        match self {
            Replay::Standard(b) => b.len(),
            Replay::Sqil { demo, online } => demo.len() + online.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn ready(&self, n: usize, m: usize) -> bool {
        match self {
            Replay::Standard(b) => b.len() >= n && b.can_sample(n, m),
            Replay::Sqil { demo, online } => !demo.is_empty() && online.len() >= n - n / 2,
        }
    }

    fn sample(&self, n: usize, m: usize, rng: &mut impl Rng) -> Result<Batch> {
        match self {
            Replay::Standard(b) => b.sample_minibatch(n, m, rng),
            Replay::Sqil { demo, online } => {
                let half = n / 2;
                // With replacement from the demo partition (all indexed as successful).
                let ids_d = demo.sample_ids(half, half, rng)?;
                let ids_o = online.sample_ids(n - half, 0, rng)?;
                let ts: Vec<&Transition> = ids_d
                    .iter()
                    .map(|&id| demo.get(id).expect("live id"))
                    .chain(ids_o.iter().map(|&id| online.get(id).expect("live id")))
                    .collect();
                Batch::from_transitions(&ts)
            }
        }
    }
}

fn build_replay(variant: &Variant, capacity: usize, demos: &[Trajectory]) -> Result<Replay> {
    match variant.replay {
        ReplayScheme::Standard { .. } => {
            let mut b = ReplayBuffer::new(capacity);
            b.seed_with_demos(demos)?;
            Ok(Replay::Standard(b))
        }
        ReplayScheme::SqilPartitions => {
            let mut demo = ReplayBuffer::new(capacity);
            let relabelled: Vec<Trajectory> = demos
                .iter()
                .map(|d| {
                    Trajectory::new(
                        d.transitions
                            .iter()
                            .map(|t| Transition {
                                r: 1.0,
                                source: Source::Demo,
                                ..t.clone()
                            })
                            .collect(),
                    )
                })
                .collect();
            demo.seed_with_demos(&relabelled)?;
            Ok(Replay::Sqil {
                demo,
                online: ReplayBuffer::new(capacity),
            })
        }
    }
}

fn mean_or_nan(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Runs the full interaction loop for `variant`. `on_eval` is called after
/// every evaluation with the new row and the current learner.
pub fn run_training(
    setup: &TrainSetup<'_>,
    variant: &Variant,
    mut on_eval: impl FnMut(&MetricsRow, &EvalRecord, &Learner) -> Result<()>,
) -> Result<RunOutput> {
    let config = setup.config;
    config.validate()?;
    let env = setup.env;
    let bc = setup.bc;
    if variant.needs_bc() && bc.is_none() {
        return Err(Error::InvalidArgument(
            "this algorithm needs a BC policy but none was given".into(),
        ));
    }
    if let Some(bc) = bc {
        if bc.state_dim() != env.state_dim || bc.action_dim() != env.action_dim {
            return Err(Error::Architecture(format!(
                "BC policy maps {} -> {}, environment `{}` needs {} -> {}",
                bc.state_dim(),
                bc.action_dim(),
                env.name,
                env.state_dim,
                env.action_dim
            )));
        }
    }
    let seed = setup.seed;
    let mut init_rng = rng::stream(seed, streams::INIT);
    let mut learner = Learner::new(env.state_dim, env.action_dim, config, &mut init_rng)?;
    if variant.init_actor_from_bc {
        let bc = bc.expect("checked above");
        learner.actor = Td3Actor::from_bc(bc, config, env.state_dim, env.action_dim)?;
    }
    let acting_bc = if variant.mode.uses_il_when_acting() {
        bc
    } else {
        None
    };
    let target_bc = if variant.mode.uses_il_in_targets() {
        bc
    } else {
        None
    };

    let mut replay = build_replay(variant, config.buffer_capacity, setup.demos)?;
    let (n, m) = match variant.replay {
        ReplayScheme::Standard { oversample } => (config.batch_size, oversample),
        ReplayScheme::SqilPartitions => (config.batch_size, 0),
    };
    if m > n {
        return Err(Error::Config(format!("oversample {m} exceeds batch size {n}")));
    }
    let demo_pairs = match variant.actor_reg {
        Some(_) => {
            let pairs: Vec<(&[f64], &[f64])> = setup
                .demos
                .iter()
                .flat_map(|d| d.transitions.iter().map(|t| (t.s.as_slice(), t.a.as_slice())))
                .collect();
            if pairs.is_empty() {
                return Err(Error::InvalidArgument(
                    "the BC regularizer needs demonstrations".into(),
                ));
            }
            pairs
        }
        None => Vec::new(),
    };

    let mut env_rng = rng::stream(seed, streams::ENV);
    let mut explore_rng = rng::stream(seed, streams::EXPLORATION);
    let mut sample_rng = rng::stream(seed, streams::SAMPLING);
    let mut noise_rng = rng::stream(seed, streams::TARGET_NOISE);
    let mut dropout_rng = rng::stream(seed, streams::DROPOUT);
    let mut subset_rng = rng::stream(seed, streams::SUBSET);
    let mut demo_rng = rng::stream(seed, streams::DEMO_BATCH);
    let eval_seed_base = rng::stream(seed, streams::EVAL).random::<u64>();

    let started = Instant::now();
    let mut metrics = Vec::new();
    let mut evals = Vec::new();
    let mut critic_losses: Vec<f64> = Vec::new();
    let mut actor_losses: Vec<f64> = Vec::new();
    let mut returns: Vec<f64> = Vec::new();
    let mut il_steps = 0usize;
    let mut successful_episodes = 0usize;

    let mut record = |step: usize,
                      learner: &Learner,
                      critic_losses: &mut Vec<f64>,
                      actor_losses: &mut Vec<f64>,
                      returns: &mut Vec<f64>|
     -> Result<()> {
        let eval = evaluate(
            learner,
            acting_bc,
            env,
            config.eval_episodes,
            eval_seed_base,
            step,
            learner.exec,
        )?;
        let row = MetricsRow {
            step,
            eval_success: eval.success_hybrid,
            il_action_fraction: eval.il_action_fraction,
            critic_loss: mean_or_nan(critic_losses),
            actor_loss: mean_or_nan(actor_losses),
            episode_return: mean_or_nan(returns),
            wall_ms: if setup.log_wall_clock {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        critic_losses.clear();
        actor_losses.clear();
        returns.clear();
        on_eval(&row, &eval, learner)?;
        metrics.push(row);
        evals.push(eval);
        Ok(())
    };

    record(0, &learner, &mut critic_losses, &mut actor_losses, &mut returns)?;

    let mut state = envs::reset(env, &mut env_rng);
    let mut episode_ids: Vec<u64> = Vec::new();
    let mut episode_return = 0.0;
    for t in 1..=config.total_steps {
        let sel = learner.select_action(acting_bc, &state.values, &mut explore_rng, ActMode::Explore)?;
        if sel.choice == Choice::Il {
            il_steps += 1;
        }
        let res = envs::step(env, &state, &sel.action)?;
        episode_return += res.reward;
        let transition = Transition {
            s: state.values.clone(),
            a: sel.action,
            r: res.reward,
            s_next: res.next_state.values.clone(),
            done: res.success,
            source: Source::Online,
        };
        match &mut replay {
            Replay::Standard(b) => episode_ids.push(b.push(transition)),
            Replay::Sqil { online, .. } => {
                online.push(Transition { r: 0.0, ..transition });
            }
        }
        if res.done {
            if res.success {
                successful_episodes += 1;
                if let Replay::Standard(b) = &mut replay {
                    b.mark_success(episode_ids.iter().copied());
                }
            }
            episode_ids.clear();
            returns.push(episode_return);
            episode_return = 0.0;
            state = envs::reset(env, &mut env_rng);
        } else {
            state = res.next_state;
        }

        if replay.ready(n, m) {
            let mut last_batch = None;
            for _ in 0..config.critic_updates {
                let batch = replay.sample(n, m, &mut sample_rng)?;
                let subset = rng::distinct_pair(&mut subset_rng, config.num_critics);
                let y = learner.compute_target(target_bc, &batch, &subset, &mut noise_rng)?;
                let losses = learner.critic_update(&batch, &y)?;
                critic_losses.push(mean_or_nan(&losses));
                learner.update_critic_targets()?;
                last_batch = Some(batch);
            }
            let batch = last_batch.expect("critic_updates >= 1");
            let reg = match (variant.actor_reg, bc) {
                (Some(settings), Some(bc)) if settings.alpha != 0.0 => {
                    let lambda = match settings.schedule {
                        Schedule::Fixed => 1.0,
                        Schedule::SoftQFilter => learner.soft_q_lambda(bc, &batch.states)?,
                    };
                    let idx: Vec<usize> = (0..n)
                        .map(|_| demo_rng.random_range(0..demo_pairs.len()))
                        .collect();
                    let ds: Vec<&[f64]> = idx.iter().map(|&i| demo_pairs[i].0).collect();
                    let da: Vec<&[f64]> = idx.iter().map(|&i| demo_pairs[i].1).collect();
                    Some(ActorRegularizer {
                        alpha: settings.alpha,
                        lambda,
                        demo_states: Tensor::from_rows(&ds)?,
                        demo_actions: Tensor::from_rows(&da)?,
                    })
                }
                _ => None,
            };
            let loss = learner.actor_update(&batch, &mut dropout_rng, reg.as_ref())?;
            actor_losses.push(loss.total);
            learner.update_actor_target()?;
        }

        if t % config.eval_every == 0 || t == config.total_steps {
            record(t, &learner, &mut critic_losses, &mut actor_losses, &mut returns)?;
        }
    }
    Ok(RunOutput {
        metrics,
        evals,
        learner,
        replay,
        train_il_fraction: if config.total_steps == 0 {
            0.0
        } else {
            il_steps as f64 / config.total_steps as f64
        },
        successful_episodes,
    })
}

/// IBRL training in the mode given by `setup.config.mode`.
pub fn train(
    setup: &TrainSetup<'_>,
    on_eval: impl FnMut(&MetricsRow, &EvalRecord, &Learner) -> Result<()>,
) -> Result<RunOutput> {
    run_training(setup, &Variant::ibrl(setup.config), on_eval)
}
