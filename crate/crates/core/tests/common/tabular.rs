//! Fitted Q iteration through `compute_target`/`critic_update` on a five-state
//! chain, compared against tabular value iteration.
//!
//! States are one-hot. Action `+1` moves right, `-1` moves left (clamped at
//! the left end). Entering the rightmost state pays 1 and terminates. The
//! target actor always proposes `+1` and the BC policy always proposes `-1`,
//! so the two-candidate maximum in the target is the tabular Bellman maximum.

use ibrl::data::{Batch, Source, Transition};
use ibrl::ibrl::{IbrlConfig, Learner, Mode};
use ibrl::imitation::{BcPolicy, Normalizer};
use ibrl::numerics::MlpParams;
use ibrl::rng;

pub const STATES: usize = 5;
pub const GAMMA: f64 = 0.9;
pub const TOL: f64 = 1e-3;
pub const OUTER: usize = 40;
pub const INNER: usize = 2000;
const ACTIONS: [f64; 2] = [1.0, -1.0];

fn one_hot(i: usize) -> Vec<f64> {
    let mut v = vec![0.0; STATES];
    v[i] = 1.0;
    v
}

fn next(s: usize, a: f64) -> usize {
    if a > 0.0 {
        s + 1
    } else {
        s.saturating_sub(1)
    }
}

/// `Q*(s, a)` for the non-terminal states by value iteration.
pub fn value_iteration() -> Vec<[f64; 2]> {
    let mut q = vec![[0.0_f64; 2]; STATES - 1];
    loop {
        let v: Vec<f64> = q.iter().map(|r| r[0].max(r[1])).collect();
        let mut delta: f64 = 0.0;
        for (s, row) in q.iter_mut().enumerate() {
            for (k, &a) in ACTIONS.iter().enumerate() {
                let s2 = next(s, a);
                let new = if s2 == STATES - 1 { 1.0 } else { GAMMA * v[s2] };
                delta = delta.max((new - row[k]).abs());
                row[k] = new;
            }
        }
        if delta < 1e-15 {
            return q;
        }
    }
}

fn constant_policy(template: &MlpParams, value: f64) -> MlpParams {
    let mut p = template.clone();
    let last = p.layers.last_mut().unwrap();
    last.weight.data_mut().fill(0.0);
    // tanh saturates to exactly +-1 in f64.
    last.bias.data_mut().fill(50.0 * value);
    p
}

pub fn config() -> IbrlConfig {
    IbrlConfig {
        num_critics: 2,
        hidden_dim: 32,
        depth: 3,
        layer_norm: true,
        dropout: 0.0,
        learning_rate: 3e-4,
        discount: GAMMA,
        exploration_std: 0.0,
        ema: 0.0,
        batch_size: 2 * (STATES - 1),
        mode: Mode::Full,
        ..IbrlConfig::default()
    }
}

pub struct TabularOutcome {
    pub max_error: f64,
    pub iterations: usize,
}

/// Runs fitted Q iteration and reports the largest `|Q_i(s, a) - Q*(s, a)|`
/// over both critics and all eight state-action pairs.
pub fn run(outer: usize, inner: usize) -> TabularOutcome {
    let cfg = config();
    let mut learner = Learner::new(STATES, 1, &cfg, &mut rng::stream(3, rng::streams::INIT)).unwrap();
    let right = constant_policy(&learner.actor.online, 1.0);
    learner.actor.online = right.clone();
    learner.actor.target = right;
    let bc = BcPolicy {
        params: constant_policy(&learner.actor.online, -1.0),
        normalizer: Normalizer::identity(STATES),
        trained_on: String::new(),
    };
    let transitions: Vec<Transition> = (0..STATES - 1)
        .flat_map(|s| {
            ACTIONS.iter().map(move |&a| {
                let s2 = next(s, a);
                let terminal = s2 == STATES - 1;
                Transition {
                    s: one_hot(s),
                    a: vec![a],
                    r: if terminal { 1.0 } else { 0.0 },
                    s_next: one_hot(s2),
                    done: terminal,
                    source: Source::Online,
                }
            })
        })
        .collect();
    let refs: Vec<&Transition> = transitions.iter().collect();
    let batch = Batch::from_transitions(&refs).unwrap();
    let mut noise = rng::stream(3, rng::streams::TARGET_NOISE);
    for _ in 0..outer {
        let y = learner
            .compute_target(Some(&bc), &batch, &[0, 1], &mut noise)
            .unwrap();
        for _ in 0..inner {
            learner.critic_update(&batch, &y).unwrap();
        }
        learner.update_critic_targets().unwrap();
    }
    let q_star = value_iteration();
    let mut max_error: f64 = 0.0;
    for i in 0..2 {
        let q = learner
            .critics
            .q(i, ibrl::ibrl::Net::Online, &batch.states, &batch.actions)
            .unwrap();
        for (row, t) in q.iter().zip(&transitions) {
            let s = t.s.iter().position(|&x| x == 1.0).unwrap();
            let k = usize::from(t.a[0] < 0.0);
            max_error = max_error.max((row - q_star[s][k]).abs());
        }
    }
    TabularOutcome {
        max_error,
        iterations: outer,
    }
}
