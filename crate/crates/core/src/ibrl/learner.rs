use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::ibrl::IbrlConfig;
use crate::imitation::{BcPolicy, Normalizer};
use crate::numerics::{
    checkpoint, ema_update, AdamState, Dropout, Graph, Head, MlpArch, MlpParams, Tensor, Var,
};
use crate::rng::{self, RngStream};

/// Which copy of a network to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Net {
    Online,
    Target,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    /// Gaussian exploration noise on the RL candidate.
    Explore,
    Eval,
}

/// Provenance of an executed action.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Choice {
    Il,
    Rl,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub action: Vec<f64>,
    pub choice: Choice,
    /// Subset-min Q of the RL candidate; `None` when no IL candidate competed.
    pub q_rl: Option<f64>,
    pub q_il: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct CriticMember {
    pub online: MlpParams,
    pub target: MlpParams,
    pub optim: AdamState,
}

#[derive(Clone, Debug)]
pub struct CriticEnsemble {
    pub members: Vec<CriticMember>,
}

/// Forward pass of a critic on `(s, a)` recorded on `g`.
fn critic_forward(
    g: &mut Graph,
    params: &MlpParams,
    states: Var,
    actions: Var,
    trainable: bool,
) -> Result<(Var, Vec<Var>)> {
    let x = g.concat_cols(states, actions)?;
    let f = params.forward::<RngStream>(g, x, trainable, Dropout::Off)?;
    Ok((f.output, f.params))
}

impl CriticEnsemble {
    pub fn new(
        count: usize,
        state_dim: usize,
        action_dim: usize,
        config: &IbrlConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let arch = MlpArch {
            input_dim: state_dim + action_dim,
            output_dim: 1,
            hidden_dim: config.hidden_dim,
            depth: config.depth,
            layer_norm: config.layer_norm,
            head: Head::Identity,
            dropout_rate: 0.0,
        };
        let members = (0..count)
            .map(|_| {
                let online = MlpParams::init(&arch, rng)?;
                Ok(CriticMember {
                    target: online.clone(),
                    optim: AdamState::new(&online, config.learning_rate),
                    online,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn net(&self, i: usize, which: Net) -> &MlpParams {
        match which {
            Net::Online => &self.members[i].online,
            Net::Target => &self.members[i].target,
        }
    }

    /// `Q_i(s, a)` per row.
    pub fn q(&self, i: usize, which: Net, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        if i >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "critic index {i} out of range for an ensemble of {}",
                self.len()
            )));
        }
        let mut g = Graph::new();
        let s = g.constant(states.clone());
        let a = g.constant(actions.clone());
        let (out, _) = critic_forward(&mut g, self.net(i, which), s, a, false)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Row-wise minimum of `Q_i(s, a)` over `members`.
    pub fn min_q(
        &self,
        members: &[usize],
        which: Net,
        states: &Tensor,
        actions: &Tensor,
    ) -> Result<Vec<f64>> {
        let mut out: Option<Vec<f64>> = None;
        for &i in members {
            let q = self.q(i, which, states, actions)?;
            out = Some(match out {
                None => q,
                Some(prev) => prev.iter().zip(&q).map(|(&a, &b)| a.min(b)).collect(),
            });
        }
        out.ok_or_else(|| Error::InvalidArgument("min_q over an empty member set".into()))
    }

    pub fn all_members(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Td3Actor {
    pub online: MlpParams,
    pub target: MlpParams,
    pub optim: AdamState,
    /// Fixed input normalization (identity unless initialized from BC).
    pub normalizer: Normalizer,
}

impl Td3Actor {
    pub fn new(state_dim: usize, action_dim: usize, config: &IbrlConfig, rng: &mut impl Rng) -> Result<Self> {
        let arch = MlpArch {
            input_dim: state_dim,
            output_dim: action_dim,
            hidden_dim: config.hidden_dim,
            depth: config.depth,
            layer_norm: config.layer_norm,
            head: Head::Tanh,
            dropout_rate: config.dropout,
        };
        let online = MlpParams::init(&arch, rng)?;
        Ok(Self {
            target: online.clone(),
            optim: AdamState::new(&online, config.learning_rate),
            normalizer: Normalizer::identity(state_dim),
            online,
        })
    }

    /// Copies weights and input normalization from a BC policy. The BC
    /// network must match the RL actor's architecture.
    pub fn from_bc(bc: &BcPolicy, config: &IbrlConfig, state_dim: usize, action_dim: usize) -> Result<Self> {
        let p = &bc.params;
        let matches = p.input_dim() == state_dim
            && p.output_dim() == action_dim
            && p.depth() == config.depth
            && (p.depth() == 1 || p.hidden_dim() == config.hidden_dim)
            && p.has_layer_norm() == config.layer_norm;
        if !matches {
            return Err(Error::Architecture(format!(
                "BC network (in {}, out {}, hidden {}, depth {}, layer_norm {}) does not match the RL actor \
                 (in {state_dim}, out {action_dim}, hidden {}, depth {}, layer_norm {})",
                p.input_dim(),
                p.output_dim(),
                p.hidden_dim(),
                p.depth(),
                p.has_layer_norm(),
                config.hidden_dim,
                config.depth,
                config.layer_norm
            )));
        }
        let mut online = p.clone();
        online.dropout_rate = config.dropout;
        Ok(Self {
            target: online.clone(),
            optim: AdamState::new(&online, config.learning_rate),
            normalizer: bc.normalizer.clone(),
            online,
        })
    }

    /// Eval-mode actions for raw states.
    pub fn act_batch(&self, states: &Tensor, which: Net) -> Result<Tensor> {
        let net = match which {
            Net::Online => &self.online,
            Net::Target => &self.target,
        };
        net.infer(&self.normalizer.normalize(states)?)
    }
}

/// Instrumentation of the shared update paths.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub target_computations: u64,
    pub critic_updates: u64,
    pub actor_updates: u64,
    pub critic_ema_updates: u64,
    pub actor_ema_updates: u64,
    /// Histogram of critic-subset sizes used for bootstrap targets.
    pub target_subset_sizes: BTreeMap<usize, u64>,
    /// Histogram of how many critics the actor objective took the min over.
    pub actor_ensemble_sizes: BTreeMap<usize, u64>,
}

/// Extra actor-loss term `alpha * lambda * mean ||a_demo - pi(s_demo)||^2`.
#[derive(Clone, Debug)]
pub struct ActorRegularizer {
    pub alpha: f64,
    pub lambda: f64,
    pub demo_states: Tensor,
    pub demo_actions: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActorLoss {
    pub total: f64,
    /// `-mean(min_i Q_i(s, pi(s)))`.
    pub q_term: f64,
    /// Unweighted regularizer (0 when absent).
    pub reg_term: f64,
}

/// Actor, critics and the hyperparameters of their updates.
#[derive(Clone, Debug)]
pub struct Learner {
    pub actor: Td3Actor,
    pub critics: CriticEnsemble,
    pub config: IbrlConfig,
    pub counters: Counters,
    pub exec: Exec,
}

fn finite_or_dump(what: &'static str, value: f64, detail: impl FnOnce() -> String) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            what,
            detail: format!("value {value}; {}", detail()),
        })
    }
}

fn batch_summary(batch: &Batch) -> String {
    let rsum: f64 = batch.rewards.iter().sum();
    let done = batch.dones.iter().filter(|d| **d).count();
    format!(
        "batch of {} (reward sum {rsum}, {done} terminal, states finite: {}, actions finite: {})",
        batch.len(),
        batch.states.is_finite(),
        batch.actions.is_finite()
    )
}

impl Learner {
    pub fn new(state_dim: usize, action_dim: usize, config: &IbrlConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let actor = Td3Actor::new(state_dim, action_dim, config, rng)?;
        let critics = CriticEnsemble::new(config.num_critics, state_dim, action_dim, config, rng)?;
        Ok(Self {
            actor,
            critics,
            config: config.clone(),
            counters: Counters::default(),
            exec: Exec::default(),
        })
    }

    /// Acting rule: compare the RL and IL candidates under the minimum of two
    /// randomly chosen online critics and take the larger; ties go to RL.
    /// Without a BC policy the RL candidate is returned directly.
    pub fn select_action(
        &self,
        bc: Option<&BcPolicy>,
        state: &[f64],
        rng: &mut impl Rng,
        mode: ActMode,
    ) -> Result<Selection> {
        let s = Tensor::new(vec![1, state.len()], state.to_vec())?;
        let mut rl = self.actor.act_batch(&s, Net::Online)?.into_data();
        if mode == ActMode::Explore {
            let std = self.config.exploration_std;
            for a in rl.iter_mut() {
                *a = (*a + std * rng::normal(rng)).clamp(-1.0, 1.0);
            }
        }
        let Some(bc) = bc else {
            return Ok(Selection {
                action: rl,
                choice: Choice::Rl,
                q_rl: None,
                q_il: None,
            });
        };
        let il = bc.act(state)?;
        let subset = rng::distinct_pair(rng, self.critics.len());
        let states = Tensor::from_rows(&[state, state])?;
        let actions = Tensor::from_rows(&[rl.as_slice(), il.as_slice()])?;
        let q = self.critics.min_q(&subset, Net::Online, &states, &actions)?;
        let (q_rl, q_il) = (q[0], q[1]);
        let (action, choice) = if q_il > q_rl {
            (il, Choice::Il)
        } else {
            (rl, Choice::Rl)
        };
        Ok(Selection {
            action,
            choice,
            q_rl: Some(q_rl),
            q_il: Some(q_il),
        })
    }

    /// Target-policy action with clipped smoothing noise, clamped to the box.
    pub fn smoothed_target_actions(&self, next_states: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
        let mut a = self.actor.act_batch(next_states, Net::Target)?;
        let (std, clip) = (self.config.exploration_std, self.config.noise_clip);
        for v in a.data_mut() {
            let eps = (std * rng::normal(rng)).clamp(-clip, clip);
            *v = (*v + eps).clamp(-1.0, 1.0);
        }
        Ok(a)
    }

    /// Bootstrap targets `y = r + gamma (1 - done) max_{a'} min_{i in subset} Q'_i(s', a')`,
    /// where `a'` ranges over the smoothed target-actor action and, when `bc`
    /// is given, the BC action.
    pub fn compute_target(
        &mut self,
        bc: Option<&BcPolicy>,
        batch: &Batch,
        subset: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        let a_rl = self.smoothed_target_actions(&batch.next_states, rng)?;
        let mut best = self
            .critics
            .min_q(subset, Net::Target, &batch.next_states, &a_rl)?;
        if let Some(bc) = bc {
            let a_il = bc.act_batch(&batch.next_states)?;
            let q_il = self
                .critics
                .min_q(subset, Net::Target, &batch.next_states, &a_il)?;
            for (b, q) in best.iter_mut().zip(q_il) {
                *b = b.max(q);
            }
        }
        self.counters.target_computations += 1;
        *self.counters.target_subset_sizes.entry(subset.len()).or_default() += 1;
        let gamma = self.config.discount;
        Ok(batch
            .rewards
            .iter()
            .zip(&batch.dones)
            .zip(best)
            .map(|((&r, &done), q)| r + if done { 0.0 } else { gamma * q })
            .collect())
    }

    /// One Adam step per online critic on `mean((y - Q_i(s, a))^2)`.
    /// Members update independently (in parallel when enabled).
    pub fn critic_update(&mut self, batch: &Batch, targets: &[f64]) -> Result<Vec<f64>> {
        if targets.len() != batch.len() {
            return Err(Error::shape(
                "critic_update targets",
                &[batch.len()],
                &[targets.len()],
            ));
        }
        let y = Tensor::new(vec![targets.len(), 1], targets.to_vec())?;
        let results = self.exec.map_mut(&mut self.critics.members, |m| -> Result<f64> {
            let mut g = Graph::new();
            let s = g.constant(batch.states.clone());
            let a = g.constant(batch.actions.clone());
            let (q, params) = critic_forward(&mut g, &m.online, s, a, true)?;
            let yv = g.constant(y.clone());
            let loss = g.mse(q, yv)?;
            let value = finite_or_dump("critic loss", g.value(loss).item(), || batch_summary(batch))?;
            let grads = g.backward(loss)?;
            m.optim.step(&mut m.online, &grads.wrt_all(&params))?;
            Ok(value)
        });
        self.counters.critic_updates += 1;
        results.into_iter().collect()
    }

    pub fn update_critic_targets(&mut self) -> Result<()> {
        let rho = self.config.ema;
        for m in &mut self.critics.members {
            ema_update(&mut m.target, &m.online, rho)?;
        }
        self.counters.critic_ema_updates += 1;
        Ok(())
    }

    pub fn update_actor_target(&mut self) -> Result<()> {
        ema_update(&mut self.actor.target, &self.actor.online, self.config.ema)?;
        self.counters.actor_ema_updates += 1;
        Ok(())
    }

    /// Records `-mean(min over all E critics of Q(s, pi(s)))` (plus the
    /// optional regularizer) with dropout active in the actor. Critic
    /// parameters enter as constants.
    fn record_actor_loss(
        &self,
        g: &mut Graph,
        states: &Tensor,
        rng: &mut RngStream,
        reg: Option<&ActorRegularizer>,
    ) -> Result<(Var, Vec<Var>, Var, Option<Var>)> {
        let s_actor = g.constant(self.actor.normalizer.normalize(states)?);
        let s_raw = g.constant(states.clone());
        let fwd = self
            .actor
            .online
            .forward(g, s_actor, true, Dropout::Sample(&mut *rng))?;
        let mut min_q: Option<Var> = None;
        for m in &self.critics.members {
            let (q, _) = critic_forward(g, &m.online, s_raw, fwd.output, false)?;
            min_q = Some(match min_q {
                None => q,
                Some(prev) => g.min(prev, q)?,
            });
        }
        let min_q = min_q.ok_or_else(|| Error::InvalidArgument("no critics".into()))?;
        let mean_q = g.mean(min_q);
        let q_term = g.scale(mean_q, -1.0);
        let mut total = q_term;
        let mut reg_var = None;
        if let Some(reg) = reg {
            let ds = g.constant(self.actor.normalizer.normalize(&reg.demo_states)?);
            let da = g.constant(reg.demo_actions.clone());
            // Second pass through the same parameter tensors: gradients of
            // both passes must land on one set of leaves.
            let pred = self
                .actor
                .online
                .apply(g, ds, &fwd.params, Dropout::Sample(&mut *rng))?;
            // Row-wise squared norm, averaged over the demo batch.
            let per_elem = g.mse(pred, da)?;
            let r = g.scale(per_elem, reg.demo_actions.cols() as f64);
            let weighted = g.scale(r, reg.alpha * reg.lambda);
            total = g.add(total, weighted)?;
            reg_var = Some(r);
        }
        Ok((total, fwd.params, q_term, reg_var))
    }

    /// One Adam step on the actor.
    pub fn actor_update(
        &mut self,
        batch: &Batch,
        rng: &mut RngStream,
        reg: Option<&ActorRegularizer>,
    ) -> Result<ActorLoss> {
        let mut g = Graph::new();
        let (total, params, q_term, reg_var) = self.record_actor_loss(&mut g, &batch.states, rng, reg)?;
        let loss = ActorLoss {
            total: finite_or_dump("actor loss", g.value(total).item(), || batch_summary(batch))?,
            q_term: g.value(q_term).item(),
            reg_term: reg_var.map_or(0.0, |r| g.value(r).item()),
        };
        let grads = g.backward(total)?;
        self.actor
            .optim
            .step(&mut self.actor.online, &grads.wrt_all(&params))?;
        self.counters.actor_updates += 1;
        *self
            .counters
            .actor_ensemble_sizes
            .entry(self.critics.len())
            .or_default() += 1;
        Ok(loss)
    }

    /// Fraction of `states` where the BC action beats the current actor under
    /// the min over all online critics (soft-Q filtering weight).
    pub fn soft_q_lambda(&self, bc: &BcPolicy, states: &Tensor) -> Result<f64> {
        let all = self.critics.all_members();
        let a_bc = bc.act_batch(states)?;
        let a_rl = self.actor.act_batch(states, Net::Online)?;
        let q_bc = self.critics.min_q(&all, Net::Online, states, &a_bc)?;
        let q_rl = self.critics.min_q(&all, Net::Online, states, &a_rl)?;
        let wins = q_bc.iter().zip(&q_rl).filter(|(b, r)| b > r).count();
        Ok(wins as f64 / states.rows() as f64)
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut nets: Vec<(String, &MlpParams)> = vec![
            ("actor".into(), &self.actor.online),
            ("actor_target".into(), &self.actor.target),
        ];
        for (i, m) in self.critics.members.iter().enumerate() {
            nets.push((format!("critic{i}"), &m.online));
            nets.push((format!("critic{i}_target"), &m.target));
        }
        nets.into_iter()
            .flat_map(|(prefix, p)| {
                p.named_tensors()
                    .into_iter()
                    .map(move |(name, t)| (format!("{prefix}.{name}"), t))
            })
            .collect()
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.named_tensors())
    }
}
