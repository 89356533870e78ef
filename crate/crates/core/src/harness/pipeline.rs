//! One experiment end to end: demos, BC policy, training, and the files a
//! run directory holds.
//!
//! ```text
//! <out>/config.toml        resolved RunConfig
//! <out>/demos.jsonl        collected demos (absent when a file was given)
//! <out>/bc.ckpt(.json)     trained BC policy (absent when a checkpoint was given)
//! <out>/metrics.csv        one row per evaluation
//! <out>/eval.csv           hybrid and RL-only success per evaluation
//! <out>/checkpoints/step_<n>.ckpt
//! <out>/summary.json
//! ```

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::baselines::{train_pt_ft, train_rlpd_plus, train_sqil};
use crate::data::{collect_demos, demo_fingerprint, read_demos, write_demos, Trajectory};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::harness::config::{Algo, RunConfig};
use crate::harness::EvalRecord;
use crate::ibrl::{run_training, Learner, MetricsRow, RunOutput, TrainSetup, Variant};
use crate::imitation::{train_bc, BcPolicy};
use crate::rng::{self, streams};

pub const METRICS_COLUMNS: [&str; 7] = [
    "step",
    "eval_success",
    "il_action_fraction",
    "critic_loss",
    "actor_loss",
    "episode_return",
    "wall_ms",
];

pub const EVAL_COLUMNS: [&str; 5] = [
    "step",
    "success_hybrid",
    "success_rl_only",
    "il_action_fraction",
    "mean_episode_length",
];

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub algo: String,
    pub env: String,
    pub seed: u64,
    pub final_success: f64,
    pub best_success: f64,
    pub train_il_fraction: f64,
    pub successful_episodes: usize,
    pub demo_fingerprint: Option<String>,
    pub bc_checksum: Option<String>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(format!("{}: {e}", path.display())))
}

/// Writes `metrics.csv` and `eval.csv` as evaluations arrive, flushing each
/// row so a crashed run keeps its curve.
pub struct CsvSink {
    metrics: csv::Writer<File>,
    evals: csv::Writer<File>,
    metrics_path: PathBuf,
    evals_path: PathBuf,
}

impl CsvSink {
    pub fn create(dir: &Path) -> Result<Self> {
        let metrics_path = dir.join("metrics.csv");
        let evals_path = dir.join("eval.csv");
        let metrics = csv::Writer::from_path(&metrics_path).map_err(|e| csv_err(&metrics_path, e))?;
        let evals = csv::Writer::from_path(&evals_path).map_err(|e| csv_err(&evals_path, e))?;
        Ok(Self {
            metrics,
            evals,
            metrics_path,
            evals_path,
        })
    }

    pub fn write(&mut self, row: &MetricsRow, eval: &EvalRecord) -> Result<()> {
        self.metrics
            .serialize(row)
            .map_err(|e| csv_err(&self.metrics_path, e))?;
        self.evals
            .serialize(eval)
            .map_err(|e| csv_err(&self.evals_path, e))?;
        self.metrics.flush()?;
        self.evals.flush()?;
        Ok(())
    }
}

/// Loads demos from `path`, or collects `num_demos` expert episodes.
pub fn prepare_demos(config: &RunConfig, path: Option<&Path>) -> Result<Vec<Trajectory>> {
    let spec = config.env_spec()?;
    let demos = match path {
        Some(p) => read_demos(p)?,
        None => {
            let mut rng = rng::stream(config.run.seed, streams::DEMOS);
            collect_demos(&spec, config.num_demos()?, config.run.demo_noise, &mut rng)?
        }
    };
    for (i, d) in demos.iter().enumerate() {
        if let Some(t) = d
            .transitions
            .iter()
            .find(|t| t.s.len() != spec.state_dim || t.a.len() != spec.action_dim)
        {
            return Err(Error::Architecture(format!(
                "demo {i} has state/action sizes {}/{}, env {} needs {}/{}",
                t.s.len(),
                t.a.len(),
                spec.name,
                spec.state_dim,
                spec.action_dim
            )));
        }
    }
    Ok(demos)
}

/// Loads the BC checkpoint at `path`, or trains one on `demos`.
pub fn prepare_bc(config: &RunConfig, demos: &[Trajectory], path: Option<&Path>) -> Result<BcPolicy> {
    match path {
        Some(p) => BcPolicy::load(p),
        None => {
            let spec = config.env_spec()?;
            Ok(train_bc(demos, &spec, &config.bc_config())?.0)
        }
    }
}

/// Trains `config.run.algo`. With `out`, writes the resolved config, CSVs
/// and checkpoints into it.
pub fn run_algo(
    config: &RunConfig,
    demos: &[Trajectory],
    bc: Option<&BcPolicy>,
    out: Option<&Path>,
) -> Result<RunOutput> {
    let config = config.resolved()?;
    let spec: EnvSpec = config.env_spec()?;
    let ibrl_config = config.ibrl_config();
    let algo = config.run.algo;
    if algo.needs_bc() && bc.is_none() {
        return Err(Error::InvalidArgument(format!("algo {algo} needs a BC policy")));
    }
    let mut sink = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.toml"), config.to_toml())?;
            if config.run.checkpoints {
                fs::create_dir_all(dir.join("checkpoints"))?;
            }
            Some(CsvSink::create(dir)?)
        }
        None => None,
    };
    let checkpoint_dir = out
        .filter(|_| config.run.checkpoints)
        .map(|d| d.join("checkpoints"));
    let on_eval = |row: &MetricsRow, eval: &EvalRecord, learner: &Learner| -> Result<()> {
        if let Some(sink) = sink.as_mut() {
            sink.write(row, eval)?;
        }
        if let Some(dir) = &checkpoint_dir {
            learner.save_checkpoint(&dir.join(format!("step_{:07}.ckpt", row.step)))?;
        }
        Ok(())
    };
    let setup = TrainSetup {
        config: &ibrl_config,
        env: &spec,
        bc: if algo.needs_bc() { bc } else { None },
        demos,
        seed: config.run.seed,
        log_wall_clock: config.run.log_wall_clock,
    };
    match algo {
        Algo::Ibrl | Algo::IbrlActorOnly | Algo::Td3 => {
            let demos_for_td3: &[Trajectory] = if algo == Algo::Td3 { &[] } else { demos };
            let setup = TrainSetup {
                demos: demos_for_td3,
                ..setup
            };
            run_training(&setup, &Variant::ibrl(&ibrl_config), on_eval)
        }
        Algo::Rlpd => train_rlpd_plus(&setup, on_eval),
        Algo::Ptft => train_pt_ft(&setup, &config.ptft, on_eval),
        Algo::Sqil => train_sqil(&setup, on_eval),
    }
}

/// Full pipeline into `out`: demos (loaded or collected), BC (loaded or
/// trained, only for algorithms that use it), training, summary.
pub fn run_experiment(
    config: &RunConfig,
    out: &Path,
    demos_path: Option<&Path>,
    bc_path: Option<&Path>,
) -> Result<RunSummary> {
    let config = config.resolved()?;
    fs::create_dir_all(out)?;
    let algo = config.run.algo;
    let demos = if algo.needs_demos() || algo.needs_bc() {
        prepare_demos(&config, demos_path)?
    } else {
        Vec::new()
    };
    let demo_fp = match demos_path {
        Some(p) => Some(demo_fingerprint(p)?),
        None if !demos.is_empty() => {
            let p = out.join("demos.jsonl");
            write_demos(&p, &demos)?;
            Some(demo_fingerprint(&p)?)
        }
        None => None,
    };
    let bc = if algo.needs_bc() {
        let bc = prepare_bc(&config, &demos, bc_path)?;
        if bc_path.is_none() {
            bc.save(&out.join("bc.ckpt"))?;
        }
        Some(bc)
    } else {
        None
    };
    let output = run_algo(&config, &demos, bc.as_ref(), Some(out))?;
    let summary = RunSummary {
        algo: algo.name().into(),
        env: config.env.name.clone(),
        seed: config.run.seed,
        final_success: output.metrics.last().map_or(f64::NAN, |r| r.eval_success),
        best_success: output
            .metrics
            .iter()
            .map(|r| r.eval_success)
            .fold(f64::NAN, f64::max),
        train_il_fraction: output.train_il_fraction,
        successful_episodes: output.successful_episodes,
        demo_fingerprint: demo_fp,
        bc_checksum: bc.as_ref().map(BcPolicy::checksum),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(out.join("summary.json"), json + "\n")?;
    Ok(summary)
}
