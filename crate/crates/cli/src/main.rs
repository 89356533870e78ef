use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ibrl::data::{collect_demos, demo_fingerprint, read_demos, write_demos};
use ibrl::exec::Exec;
use ibrl::harness::{run_experiment, run_sweep, Algo, RunConfig, SweepSpec};
use ibrl::imitation::train_bc;
use ibrl::rng::{self, streams};

#[derive(Parser)]
#[command(
    name = "ibrl",
    version,
    about = "Imitation-bootstrapped RL on toy sparse-reward tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML run config; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `section.key=value` overrides, applied last.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the scripted expert and keep successful episodes.
    CollectDemos {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a BC policy and save the selected checkpoint.
    TrainBc {
        #[arg(long)]
        env: String,
        #[arg(long)]
        demos: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train one algorithm and write metrics, checkpoints and the resolved config.
    Train {
        #[arg(long)]
        algo: String,
        #[arg(long)]
        env: Option<String>,
        /// Demo file; collected from the scripted expert when absent.
        #[arg(long)]
        demos: Option<PathBuf>,
        /// BC checkpoint; trained on the demos when absent.
        #[arg(long)]
        bc: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Pt-Ft regularization weight.
        #[arg(long)]
        alpha: Option<f64>,
        /// Pt-Ft schedule: fixed or soft_q_filter.
        #[arg(long)]
        schedule: Option<String>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run a grid of configs over seeds and aggregate the curves.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run one configuration at a time.
        #[arg(long)]
        sequential: bool,
    },
}

fn load_config(args: &ConfigArgs, extra: Vec<(String, String)>) -> Result<RunConfig> {
    let base = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut overrides = extra;
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .with_context(|| format!("--set expects section.key=value, got `{s}`"))?;
        overrides.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    let cfg = base.with_env_vars(std::env::vars())?.with_overrides(overrides)?;
    Ok(cfg.resolved()?)
}

fn schedule_name(s: &str) -> Result<&'static str> {
    Ok(match s {
        "fixed" => "fixed",
        "soft_q_filter" | "soft-q-filter" => "soft_q_filter",
        other => bail!("unknown schedule `{other}` (expected fixed or soft_q_filter)"),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::CollectDemos {
            env,
            count,
            noise,
            seed,
            out,
        } => {
            let spec = ibrl::envs::EnvSpec::by_name(&env)?;
            let demos = collect_demos(&spec, count, noise, &mut rng::stream(seed, streams::DEMOS))?;
            ensure_parent(&out)?;
            write_demos(&out, &demos)?;
            let steps: usize = demos.iter().map(|d| d.len()).sum();
            println!(
                "wrote {} demos ({steps} transitions) to {} sha256 {}",
                demos.len(),
                out.display(),
                demo_fingerprint(&out)?
            );
        }
        Command::TrainBc {
            env,
            demos,
            seed,
            out,
            cfg,
        } => {
            let config = load_config(
                &cfg,
                vec![("env.name".into(), env), ("run.seed".into(), seed.to_string())],
            )?;
            let spec = config.env_spec()?;
            let demos = read_demos(&demos)?;
            let (policy, report) = train_bc(&demos, &spec, &config.bc_config())?;
            for e in &report.evals {
                println!("step {:>7} success {:.3}", e.step, e.success);
            }
            ensure_parent(&out)?;
            policy.save(&out)?;
            println!(
                "selected step {} (success {:.3}); saved {} checksum {}",
                report.selected.step,
                report.selected.success,
                out.display(),
                policy.checksum()
            );
        }
        Command::Train {
            algo,
            env,
            demos,
            bc,
            seed,
            out,
            alpha,
            schedule,
            cfg,
        } => {
            let algo: Algo = algo.parse()?;
            if (alpha.is_some() || schedule.is_some()) && algo != Algo::Ptft {
                bail!("--alpha and --schedule only apply to --algo ptft");
            }
            let mut extra = vec![("run.algo".to_owned(), algo.name().to_owned())];
            if let Some(env) = env {
                extra.push(("env.name".into(), env));
            }
            if let Some(seed) = seed {
                extra.push(("run.seed".into(), seed.to_string()));
            }
            if let Some(alpha) = alpha {
                extra.push(("ptft.alpha".into(), alpha.to_string()));
            }
            if let Some(s) = schedule {
                extra.push(("ptft.schedule".into(), schedule_name(&s)?.into()));
            }
            let config = load_config(&cfg, extra)?;
            let summary = run_experiment(&config, &out, demos.as_deref(), bc.as_deref())?;
            println!("{}", summary_line(&summary));
        }
        Command::Sweep {
            grid,
            out,
            sequential,
        } => {
            let spec = SweepSpec::load(&grid)?;
            let exec = if sequential {
                Exec::Sequential
            } else {
                Exec::Parallel
            };
            let runs = run_sweep(&spec, &out, exec)?;
            let failed = runs.iter().filter(|r| r.outcome.is_err()).count();
            println!(
                "{} runs, {failed} failed; aggregate in {}",
                runs.len(),
                out.join("aggregate.csv").display()
            );
            if failed == runs.len() && !runs.is_empty() {
                bail!("every run failed; see {}", out.join("failures.csv").display());
            }
        }
    }
    Ok(())
}

fn summary_line(summary: &ibrl::harness::RunSummary) -> String {
    format!(
        "{} {} seed {}: final success {:.3}, best {:.3}",
        summary.algo, summary.env, summary.seed, summary.final_success, summary.best_success
    )
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    run(Cli::parse())
}
