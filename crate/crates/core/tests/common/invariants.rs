//! Structural invariants of the acting rule, the bootstrap target and the
//! update loop, each returning a description of the first violation.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use ibrl::data::Batch;
use ibrl::envs::EnvSpec;
use ibrl::ibrl::{run_training, ActMode, Choice, IbrlConfig, Learner, Mode, Net, TrainSetup, Variant};
use ibrl::imitation::{BcPolicy, Normalizer};
use ibrl::numerics::{Head, MlpArch, MlpParams, Tensor};
use ibrl::rng::{self, RngStream};
use rand::Rng;

pub type Check = Result<(), String>;

pub type NamedCheck = (&'static str, fn() -> Check);

pub const CHECKS: [NamedCheck; 7] = [
    ("argmax scale invariance", argmax_scale_invariance),
    ("target superset monotonicity", superset_monotonicity),
    ("subset sizes (2 for targets, E for the actor)", subset_sizes),
    ("frozen BC checksum", frozen_bc),
    ("terminal masking", terminal_masking),
    ("hybrid choice dominates at the Q level", hybrid_q_dominance),
    ("update determinism", update_determinism),
];

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn small_config() -> IbrlConfig {
    IbrlConfig {
        num_critics: 5,
        critic_updates: 3,
        hidden_dim: 16,
        batch_size: 16,
        dropout: 0.5,
        learning_rate: 1e-3,
        eval_every: 200,
        eval_episodes: 2,
        total_steps: 200,
        mode: Mode::Full,
        ..IbrlConfig::default()
    }
}

/// A BC policy with random weights whose actions spread over the box.
pub fn random_bc(spec: &EnvSpec, cfg: &IbrlConfig, rng: &mut RngStream) -> BcPolicy {
    let arch = MlpArch {
        input_dim: spec.state_dim,
        output_dim: spec.action_dim,
        hidden_dim: cfg.hidden_dim,
        depth: cfg.depth,
        layer_norm: cfg.layer_norm,
        head: Head::Tanh,
        dropout_rate: 0.0,
    };
    let mut params = MlpParams::init(&arch, rng).unwrap();
    for w in params.layers.last_mut().unwrap().weight.data_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    BcPolicy {
        params,
        normalizer: Normalizer::identity(spec.state_dim),
        trained_on: String::new(),
    }
}

fn random_rows(rng: &mut RngStream, rows: usize, cols: usize) -> Tensor {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn random_batch(spec: &EnvSpec, n: usize, rng: &mut RngStream) -> Batch {
    Batch {
        states: random_rows(rng, n, spec.state_dim),
        actions: random_rows(rng, n, spec.action_dim),
        rewards: (0..n)
            .map(|_| f64::from(u8::from(rng.random_bool(0.3))))
            .collect(),
        next_states: random_rows(rng, n, spec.state_dim),
        dones: (0..n).map(|_| rng.random_bool(0.3)).collect(),
    }
}

/// A learner whose critics and actor have spread-out outputs.
pub fn fixture(seed: u64) -> (EnvSpec, Learner, BcPolicy) {
    let spec = EnvSpec::point_pick();
    let cfg = small_config();
    let mut rng = rng::stream(seed, rng::streams::INIT);
    let mut learner = Learner::new(spec.state_dim, spec.action_dim, &cfg, &mut rng).unwrap();
    for w in learner.actor.online.layers.last_mut().unwrap().weight.data_mut() {
        *w = rng.random_range(-1.0..1.0);
    }
    learner.actor.target = learner.actor.online.clone();
    let bc = random_bc(&spec, &cfg, &mut rng);
    (spec, learner, bc)
}

fn scale_critics(learner: &mut Learner, c: f64) {
    for m in &mut learner.critics.members {
        for net in [&mut m.online, &mut m.target] {
            let last = net.layers.last_mut().unwrap();
            last.weight.data_mut().iter_mut().for_each(|w| *w *= c);
            last.bias.data_mut().iter_mut().for_each(|b| *b *= c);
        }
    }
}

/// Scaling every critic by a positive constant leaves every choice unchanged.
pub fn argmax_scale_invariance() -> Check {
    let (spec, learner, bc) = fixture(1);
    let mut rng = rng::stream(1, 0);
    let mut il_seen = 0;
    for c in [1e-3, 3.7, 250.0] {
        let mut scaled = learner.clone();
        scale_critics(&mut scaled, c);
        for i in 0..200 {
            let s: Vec<f64> = (0..spec.state_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = rng::stream(2, i);
            let a = learner
                .select_action(Some(&bc), &s, &mut r.clone(), ActMode::Explore)
                .unwrap();
            let b = scaled
                .select_action(Some(&bc), &s, &mut r.clone(), ActMode::Explore)
                .unwrap();
            ensure(a.choice == b.choice && a.action == b.action, || {
                format!(
                    "scale {c}: choice {:?} became {:?} at state {i}",
                    a.choice, b.choice
                )
            })?;
            il_seen += usize::from(a.choice == Choice::Il);
        }
    }
    ensure(il_seen > 0 && il_seen < 600, || {
        format!("degenerate fixture: {il_seen}/600 IL choices")
    })
}

/// Adding the BC candidate never lowers a target, and raises some.
pub fn superset_monotonicity() -> Check {
    let (spec, mut learner, bc) = fixture(2);
    let mut rng = rng::stream(3, 0);
    let mut raised = 0;
    for k in 0..20 {
        let batch = random_batch(&spec, 64, &mut rng);
        let subset = rng::distinct_pair(&mut rng, learner.critics.len());
        let noise = rng::stream(4, k);
        let full = learner
            .compute_target(Some(&bc), &batch, &subset, &mut noise.clone())
            .unwrap();
        let actor_only = learner
            .compute_target(None, &batch, &subset, &mut noise.clone())
            .unwrap();
        for (j, (f, a)) in full.iter().zip(&actor_only).enumerate() {
            ensure(f >= a, || format!("batch {k} row {j}: {f} < {a}"))?;
            raised += usize::from(f > a);
        }
    }
    ensure(raised > 0, || {
        "the BC candidate never won; fixture is degenerate".into()
    })
}

pub struct ShortRun {
    pub config: IbrlConfig,
    pub target_subset_sizes: BTreeMap<usize, u64>,
    pub actor_ensemble_sizes: BTreeMap<usize, u64>,
    pub critic_updates: u64,
    pub actor_updates: u64,
    pub bc_before: (String, BcPolicy),
    pub bc_after: (String, BcPolicy),
}

/// A short IBRL run on PointPick with a random BC policy, shared between checks.
pub fn short_run() -> &'static ShortRun {
    static RUN: OnceLock<ShortRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let spec = EnvSpec::point_pick();
        let config = small_config();
        let bc = random_bc(&spec, &config, &mut rng::stream(5, 0));
        let bc_before = (bc.checksum(), bc.clone());
        let setup = TrainSetup {
            config: &config,
            env: &spec,
            bc: Some(&bc),
            demos: &[],
            seed: 5,
            log_wall_clock: false,
        };
        let out = run_training(&setup, &Variant::ibrl(&config), |_, _, _| Ok(())).unwrap();
        let c = &out.learner.counters;
        ShortRun {
            target_subset_sizes: c.target_subset_sizes.clone(),
            actor_ensemble_sizes: c.actor_ensemble_sizes.clone(),
            critic_updates: c.critic_updates,
            actor_updates: c.actor_updates,
            bc_before,
            bc_after: (bc.checksum(), bc.clone()),
            config,
        }
    })
}

pub fn subset_sizes() -> Check {
    let run = short_run();
    let e = run.config.num_critics;
    ensure(run.actor_updates > 0, || "no updates happened".into())?;
    ensure(
        run.target_subset_sizes.keys().copied().collect::<Vec<_>>() == [2],
        || format!("target subset sizes {:?}", run.target_subset_sizes),
    )?;
    ensure(run.target_subset_sizes[&2] == run.critic_updates, || {
        format!(
            "{} targets for {} critic updates",
            run.target_subset_sizes[&2], run.critic_updates
        )
    })?;
    ensure(
        run.actor_ensemble_sizes.keys().copied().collect::<Vec<_>>() == [e],
        || {
            format!(
                "actor ensemble sizes {:?}, expected all {e}",
                run.actor_ensemble_sizes
            )
        },
    )?;
    ensure(
        run.critic_updates == run.config.critic_updates as u64 * run.actor_updates,
        || {
            format!(
                "{} critic updates for {} actor updates",
                run.critic_updates, run.actor_updates
            )
        },
    )
}

pub fn frozen_bc() -> Check {
    let run = short_run();
    ensure(
        run.bc_before.0 == run.bc_after.0 && run.bc_before.1 == run.bc_after.1,
        || format!("BC checksum moved from {} to {}", run.bc_before.0, run.bc_after.0),
    )
}

/// Terminal rows get exactly their reward; non-terminal rows bootstrap.
pub fn terminal_masking() -> Check {
    let (spec, mut learner, bc) = fixture(6);
    let mut rng = rng::stream(7, 0);
    for bc_opt in [Some(&bc), None] {
        let mut batch = random_batch(&spec, 64, &mut rng);
        batch.dones = (0..64).map(|i| i % 2 == 0).collect();
        batch.rewards = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
        let subset = rng::distinct_pair(&mut rng, learner.critics.len());
        let y = learner.compute_target(bc_opt, &batch, &subset, &mut rng).unwrap();
        for (j, ((&yj, &r), &done)) in y.iter().zip(&batch.rewards).zip(&batch.dones).enumerate() {
            if done {
                ensure(yj.to_bits() == r.to_bits(), || {
                    format!("row {j}: y = {yj} on a terminal, r = {r}")
                })?;
            } else {
                ensure(yj != r, || {
                    format!("row {j}: non-terminal target did not bootstrap")
                })?;
            }
        }
    }
    Ok(())
}

/// The executed candidate always has the larger subset-min Q, ties to RL.
pub fn hybrid_q_dominance() -> Check {
    let (spec, learner, bc) = fixture(8);
    let mut rng = rng::stream(9, 0);
    let mut counts = [0usize; 2];
    for i in 0..300 {
        let s: Vec<f64> = (0..spec.state_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sel = learner
            .select_action(Some(&bc), &s, &mut rng, ActMode::Eval)
            .unwrap();
        let (q_rl, q_il) = (sel.q_rl.unwrap(), sel.q_il.unwrap());
        let st = Tensor::new(vec![1, s.len()], s.clone()).unwrap();
        match sel.choice {
            Choice::Il => {
                counts[0] += 1;
                ensure(q_il > q_rl, || {
                    format!("state {i}: IL chosen with {q_il} <= {q_rl}")
                })?;
                ensure(sel.action == bc.act(&s).unwrap(), || {
                    format!("state {i}: IL action mismatch")
                })?;
            }
            Choice::Rl => {
                counts[1] += 1;
                ensure(q_rl >= q_il, || {
                    format!("state {i}: RL chosen with {q_rl} < {q_il}")
                })?;
                let a = learner.actor.act_batch(&st, Net::Online).unwrap().into_data();
                ensure(sel.action == a, || format!("state {i}: RL action mismatch"))?;
            }
        }
    }
    ensure(counts[0] > 0 && counts[1] > 0, || {
        format!("degenerate fixture: IL/RL counts {counts:?}")
    })?;
    // Identical candidates tie, and ties go to RL.
    let twin = BcPolicy {
        params: learner.actor.online.clone(),
        normalizer: learner.actor.normalizer.clone(),
        trained_on: String::new(),
    };
    for _ in 0..50 {
        let s: Vec<f64> = (0..spec.state_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sel = learner
            .select_action(Some(&twin), &s, &mut rng, ActMode::Eval)
            .unwrap();
        ensure(sel.choice == Choice::Rl, || "a tie went to IL".into())?;
    }
    Ok(())
}

fn updates(seed: u64, k: usize) -> Vec<(String, Vec<u64>)> {
    let (spec, mut learner, bc) = fixture(seed);
    let mut data = rng::stream(seed, 100);
    let mut noise = rng::stream(seed, rng::streams::TARGET_NOISE);
    let mut dropout = rng::stream(seed, rng::streams::DROPOUT);
    for _ in 0..k {
        let batch = random_batch(&spec, 32, &mut data);
        let subset = rng::distinct_pair(&mut data, learner.critics.len());
        let y = learner
            .compute_target(Some(&bc), &batch, &subset, &mut noise)
            .unwrap();
        learner.critic_update(&batch, &y).unwrap();
        learner.update_critic_targets().unwrap();
        learner.actor_update(&batch, &mut dropout, None).unwrap();
        learner.update_actor_target().unwrap();
    }
    learner
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

/// Same seed and operation sequence give bit-identical parameters.
pub fn update_determinism() -> Check {
    let a = updates(10, 8);
    let b = updates(10, 8);
    ensure(a == b, || "parameters differ between identical runs".into())?;
    ensure(a != updates(11, 8), || {
        "a different seed produced identical parameters".into()
    })
}
