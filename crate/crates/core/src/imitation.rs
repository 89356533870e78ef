//! Behavior cloning of a deterministic, tanh-bounded policy on
//! demonstrations, with per-dimension state normalization and periodic
//! evaluation for checkpoint selection.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{encode_demos, Trajectory};
use crate::envs::{self, EnvSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numerics::{checkpoint, AdamState, Dropout, Graph, Head, MlpArch, MlpParams, Tensor};
use crate::rng::{self, streams, RngStream};

pub const STD_FLOOR: f64 = 1e-6;

/// Fixed affine map `x -> (x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Per-dimension mean and population std, with std floored at [`STD_FLOOR`].
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot fit a normalizer on no data".into()))?;
        let dim = first.as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, &v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((acc, &v), &m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.std.iter().all(|&s| s == 1.0)
    }

    pub fn normalize(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, |v, m, s| (v - m) / s)
    }

    pub fn denormalize(&self, x: &Tensor) -> Result<Tensor> {
        self.apply(x, |v, m, s| v * s + m)
    }

    fn apply(&self, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Result<Tensor> {
        if x.cols() != self.dim() {
            return Err(Error::shape("normalizer", x.shape(), &[self.dim()]));
        }
        if self.is_identity() {
            return Ok(x.clone());
        }
        let d = self.dim();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, self.mean[i % d], self.std[i % d]))
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }
}

/// Frozen imitation policy.
#[derive(Clone, Debug, PartialEq)]
pub struct BcPolicy {
    pub params: MlpParams,
    pub normalizer: Normalizer,
    /// SHA-256 of the serialized training demonstrations.
    pub trained_on: String,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    state_mean: Vec<f64>,
    state_std: Vec<f64>,
    dropout_rate: f64,
    trained_on: String,
}

impl BcPolicy {
    pub fn state_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.params.output_dim()
    }

    /// Actions for a `[n, state_dim]` batch of raw states.
    pub fn act_batch(&self, states: &Tensor) -> Result<Tensor> {
        if states.rank() != 2 || states.cols() != self.state_dim() {
            return Err(Error::shape("bc_act", states.shape(), &[self.state_dim()]));
        }
        self.params.infer(&self.normalizer.normalize(states)?)
    }

    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        let s = Tensor::new(vec![1, state.len()], state.to_vec())
            .map_err(|_| Error::shape("bc_act", &[state.len()], &[self.state_dim()]))?;
        Ok(self.act_batch(&s)?.into_data())
    }

    /// Hex SHA-256 over every parameter's bytes, in checkpoint order.
    pub fn checksum(&self) -> String {
        params_checksum(&self.params)
    }

    /// Sidecar path for a checkpoint path: `<path>.json`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut os = path.as_os_str().to_owned();
        os.push(".json");
        PathBuf::from(os)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params.named_tensors())?;
        let sidecar = Sidecar {
            state_mean: self.normalizer.mean.clone(),
            state_std: self.normalizer.std.clone(),
            dropout_rate: self.params.dropout_rate,
            trained_on: self.trained_on.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        fs::write(Self::sidecar_path(path), json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let named = checkpoint::load(path)?;
        let sidecar_path = Self::sidecar_path(path);
        let text = fs::read_to_string(&sidecar_path)?;
        let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
            path: sidecar_path.clone(),
            message: e.to_string(),
        })?;
        let params = MlpParams::from_named(named, Head::Tanh, sidecar.dropout_rate)?;
        let normalizer = Normalizer {
            mean: sidecar.state_mean,
            std: sidecar.state_std,
        };
        if normalizer.dim() != params.input_dim() || normalizer.std.len() != normalizer.dim() {
            return Err(Error::Checkpoint {
                path: sidecar_path,
                message: "normalizer width does not match network input".into(),
            });
        }
        Ok(Self {
            params,
            normalizer,
            trained_on: sidecar.trained_on,
        })
    }
}

pub fn params_checksum(params: &MlpParams) -> String {
    let mut h = Sha256::new();
    for t in params.tensors() {
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub hidden_dim: usize,
    pub depth: usize,
    pub layer_norm: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            depth: 3,
            layer_norm: true,
            steps: 20_000,
            batch_size: 256,
            learning_rate: 1e-4,
            eval_every: 1_000,
            eval_episodes: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcEval {
    pub step: usize,
    pub success: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcReport {
    /// Minibatch loss of every gradient step.
    pub losses: Vec<f64>,
    pub evals: Vec<BcEval>,
    pub selected: BcEval,
}

/// Success rate of `policy` over `episodes` seeded resets, evaluated in
/// parallel and aggregated in episode order.
pub fn evaluate_bc(policy: &BcPolicy, spec: &EnvSpec, episodes: usize, seed: u64, exec: Exec) -> Result<f64> {
    if episodes == 0 {
        return Ok(0.0);
    }
    let outcomes = exec.map_range(episodes, |i| {
        let start = envs::reset(spec, &mut rng::stream(seed, i as u64));
        envs::rollout(spec, start, |s| policy.act(&s.values)).map(|(ok, _)| ok)
    });
    let mut wins = 0;
    for o in outcomes {
        if o? {
            wins += 1;
        }
    }
    Ok(wins as f64 / episodes as f64)
}

/// Fits a policy to demonstration `(s, a)` pairs by mean-squared error.
///
/// Checkpoints are evaluated every `eval_every` steps (and after the final
/// step); the returned policy is drawn uniformly from the three best.
pub fn train_bc(demos: &[Trajectory], spec: &EnvSpec, config: &BcConfig) -> Result<(BcPolicy, BcReport)> {
    let pairs: Vec<(&[f64], &[f64])> = demos
        .iter()
        .flat_map(|d| d.transitions.iter().map(|t| (t.s.as_slice(), t.a.as_slice())))
        .collect();
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "behavior cloning needs at least one demonstration".into(),
        ));
    }
    if config.batch_size == 0 || config.eval_every == 0 {
        return Err(Error::InvalidArgument(
            "batch_size and eval_every must be positive".into(),
        ));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "BC learning_rate must be finite and positive, got {}",
            config.learning_rate
        )));
    }
    let states: Vec<&[f64]> = pairs.iter().map(|p| p.0).collect();
    let actions: Vec<&[f64]> = pairs.iter().map(|p| p.1).collect();
    let normalizer = Normalizer::fit(&states)?;
    let norm_states = normalizer.normalize(&Tensor::from_rows(&states)?)?;
    let action_mat = Tensor::from_rows(&actions)?;
    let (sd, ad) = (norm_states.cols(), action_mat.cols());
    if sd != spec.state_dim || ad != spec.action_dim {
        return Err(Error::shape(
            "train_bc demos",
            &[sd, ad],
            &[spec.state_dim, spec.action_dim],
        ));
    }
    let trained_on = hex::encode(Sha256::digest(encode_demos(demos)?.as_bytes()));

    let arch = MlpArch {
        input_dim: sd,
        output_dim: ad,
        hidden_dim: config.hidden_dim,
        depth: config.depth,
        layer_norm: config.layer_norm,
        head: Head::Tanh,
        dropout_rate: 0.0,
    };
    let mut init_rng = rng::stream(config.seed, streams::INIT);
    let mut batch_rng = rng::stream(config.seed, streams::SAMPLING);
    let eval_seed = config.seed.wrapping_add(1_000_003);
    let mut policy = BcPolicy {
        params: MlpParams::init(&arch, &mut init_rng)?,
        normalizer,
        trained_on,
    };
    let mut adam = AdamState::new(&policy.params, config.learning_rate);

    let mut losses = Vec::with_capacity(config.steps);
    let mut snapshots: Vec<(BcEval, MlpParams)> = Vec::new();
    let n = pairs.len();
    for step in 1..=config.steps {
        let idx: Vec<usize> = (0..config.batch_size)
            .map(|_| batch_rng.random_range(0..n))
            .collect();
        let xs: Vec<&[f64]> = idx.iter().map(|&i| norm_states.row(i)).collect();
        let ys: Vec<&[f64]> = idx.iter().map(|&i| action_mat.row(i)).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&xs)?);
        let y = g.constant(Tensor::from_rows(&ys)?);
        let fwd = policy
            .params
            .forward::<RngStream>(&mut g, x, true, Dropout::Off)?;
        let loss = g.mse(fwd.output, y)?;
        losses.push(g.value(loss).item());
        let grads = g.backward(loss)?;
        adam.step(&mut policy.params, &grads.wrt_all(&fwd.params))?;

        if step % config.eval_every == 0 || step == config.steps {
            let success = evaluate_bc(&policy, spec, config.eval_episodes, eval_seed, Exec::default())?;
            snapshots.push((BcEval { step, success }, policy.params.clone()));
        }
    }
    if snapshots.is_empty() {
        let success = evaluate_bc(&policy, spec, config.eval_episodes, eval_seed, Exec::default())?;
        snapshots.push((BcEval { step: 0, success }, policy.params.clone()));
    }
    let evals: Vec<BcEval> = snapshots.iter().map(|(e, _)| e.clone()).collect();
    let mut ranked: Vec<usize> = (0..snapshots.len()).collect();
    // Best success first; among equals, later checkpoints first.
    ranked.sort_by(|&a, &b| {
        snapshots[b]
            .0
            .success
            .total_cmp(&snapshots[a].0.success)
            .then(snapshots[b].0.step.cmp(&snapshots[a].0.step))
    });
    ranked.truncate(3);
    let mut pick_rng = rng::stream(config.seed, streams::CHECKPOINT_PICK);
    let chosen = *ranked.choose(&mut pick_rng).expect("at least one snapshot");
    let (selected, params) = snapshots.swap_remove(chosen);
    policy.params = params;
    Ok((
        policy,
        BcReport {
            losses,
            evals,
            selected,
        },
    ))
}
