use serde::Serialize;

use crate::envs::{self, EnvSpec};
use crate::error::Result;
use crate::exec::Exec;
use crate::ibrl::{ActMode, Choice, Learner, Net};
use crate::imitation::BcPolicy;
use crate::numerics::Tensor;
use crate::rng;

/// Paired evaluation at one point of training.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub step: usize,
    /// Success rate of the hybrid policy (IL/RL chosen by the critics).
    pub success_hybrid: f64,
    /// Success rate of the RL actor alone, from the same initial states.
    pub success_rl_only: f64,
    /// Fraction of hybrid steps that executed the IL action.
    pub il_action_fraction: f64,
    /// Mean hybrid episode length.
    pub mean_episode_length: f64,
}

struct EpisodeOutcome {
    hybrid_success: bool,
    hybrid_len: usize,
    il_steps: usize,
    rl_success: bool,
}

/// Runs `n_episodes` twice from identical seeded initial states: once with
/// the hybrid acting rule and once with the RL actor alone. Episode `i`
/// always starts from `reset(stream(eval_seed_base, i))`, so every call with
/// the same base sees the same starts. Without a BC policy both modes are
/// the RL actor and the IL fraction is 0.
pub fn evaluate(
    learner: &Learner,
    bc: Option<&BcPolicy>,
    env: &EnvSpec,
    n_episodes: usize,
    eval_seed_base: u64,
    step: usize,
    exec: Exec,
) -> Result<EvalRecord> {
    let rl_policy = |s: &envs::EnvState| -> Result<Vec<f64>> {
        let x = Tensor::new(vec![1, s.values.len()], s.values.clone())?;
        Ok(learner.actor.act_batch(&x, Net::Online)?.into_data())
    };
    let outcomes = exec.map_range(n_episodes, |i| -> Result<EpisodeOutcome> {
        let start = envs::reset(env, &mut rng::stream(eval_seed_base, i as u64));
        let (rl_success, rl_len) = envs::rollout(env, start.clone(), rl_policy)?;
        let Some(bc) = bc else {
            return Ok(EpisodeOutcome {
                hybrid_success: rl_success,
                hybrid_len: rl_len,
                il_steps: 0,
                rl_success,
            });
        };
        let mut subset_rng = rng::stream(eval_seed_base.wrapping_add(1), i as u64);
        let mut il_steps = 0;
        let (hybrid_success, hybrid_len) = envs::rollout(env, start, |s| {
            let sel = learner.select_action(Some(bc), &s.values, &mut subset_rng, ActMode::Eval)?;
            if sel.choice == Choice::Il {
                il_steps += 1;
            }
            Ok(sel.action)
        })?;
        Ok(EpisodeOutcome {
            hybrid_success,
            hybrid_len,
            il_steps,
            rl_success,
        })
    });
    let outcomes: Vec<EpisodeOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let n = n_episodes.max(1) as f64;
    let rate = |f: fn(&EpisodeOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n;
    let total_steps: usize = outcomes.iter().map(|o| o.hybrid_len).sum();
    let il_steps: usize = outcomes.iter().map(|o| o.il_steps).sum();
    Ok(EvalRecord {
        step,
        success_hybrid: rate(|o| o.hybrid_success),
        success_rl_only: rate(|o| o.rl_success),
        il_action_fraction: if total_steps == 0 {
            0.0
        } else {
            il_steps as f64 / total_steps as f64
        },
        mean_episode_length: total_steps as f64 / n,
    })
}
