//! Grid sweeps over run configs. A grid file is TOML:
//!
//! ```toml
//! base = "base.toml"              # optional, relative to the grid file
//! seeds = "1..4"                  # or [1, 2, 3]; ranges are half-open
//!
//! [set]                           # fixed overrides for every run
//! "ibrl.total_steps" = 20000
//!
//! [grid]                          # Cartesian product of these lists
//! "run.algo" = ["ibrl", "rlpd"]
//! "ibrl.learning_rate" = [1e-4, 1e-3]
//! ```
//!
//! Each (combination, seed) pair runs in its own directory
//! `<out>/<combination>/seed_<seed>`. `aggregate.csv` holds the across-seed
//! mean and standard error of every metric at every evaluation step and
//! `failures.csv` records runs that errored.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::baselines::{DEFAULT_ALPHAS, DEFAULT_SCHEDULES};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::harness::config::RunConfig;
use crate::harness::pipeline::{run_experiment, RunSummary};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    /// `(section.key, values)` in file order.
    pub grid: Vec<(String, Vec<String>)>,
    pub seeds: Vec<u64>,
}

/// One point of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Combination {
    pub assignments: Vec<(String, String)>,
}

impl Combination {
    /// Directory-safe label such as `run.algo=ibrl,ibrl.batch_size=64`.
    pub fn label(&self) -> String {
        if self.assignments.is_empty() {
            return "base".into();
        }
        self.assignments
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "=,.-_+".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    }
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses `"a..b"` (half-open), `"a..=b"`, a single integer, or an array.
pub fn parse_seeds(v: &toml::Value) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot read seeds from {v}"));
    match v {
        toml::Value::Integer(i) => Ok(vec![u64::try_from(*i).map_err(|_| bad())?]),
        toml::Value::Array(items) => items
            .iter()
            .map(|x| x.as_integer().and_then(|i| u64::try_from(i).ok()).ok_or_else(bad))
            .collect(),
        toml::Value::String(s) => {
            let (lo, hi, inclusive) = if let Some((a, b)) = s.split_once("..=") {
                (a, b, true)
            } else if let Some((a, b)) = s.split_once("..") {
                (a, b, false)
            } else {
                return Err(bad());
            };
            let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
            let seeds: Vec<u64> = if inclusive {
                (lo..=hi).collect()
            } else {
                (lo..hi).collect()
            };
            if seeds.is_empty() {
                return Err(bad());
            }
            Ok(seeds)
        }
        _ => Err(bad()),
    }
}

impl SweepSpec {
    pub fn parse(text: &str, dir: &Path) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = RunConfig::default();
        let mut seeds = vec![0];
        let mut grid = Vec::new();
        let mut fixed = Vec::new();
        for (key, value) in &table {
            match (key.as_str(), value) {
                ("base", toml::Value::String(p)) => base = RunConfig::load(&dir.join(p))?,
                ("seeds", v) => seeds = parse_seeds(v)?,
                ("set", toml::Value::Table(t)) => {
                    for (k, v) in t {
                        fixed.push((k.clone(), v.to_string()));
                    }
                }
                ("grid", toml::Value::Table(t)) => {
                    for (k, v) in t {
                        let toml::Value::Array(items) = v else {
                            return Err(Error::Config(format!("grid entry `{k}` must be a list")));
                        };
                        if items.is_empty() {
                            return Err(Error::Config(format!("grid entry `{k}` is empty")));
                        }
                        grid.push((k.clone(), items.iter().map(value_text).collect()));
                    }
                }
                (other, _) => {
                    return Err(Error::Config(format!("unexpected sweep key `{other}`")));
                }
            }
        }
        let spec = Self {
            base: base.with_overrides(fixed)?,
            grid,
            seeds,
        };
        for c in spec.combinations() {
            spec.config_for(&c, spec.seeds[0])?.resolved()?;
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// The default Pt-Ft sweep: every alpha crossed with both schedules.
    pub fn ptft_default(base: RunConfig, seeds: Vec<u64>) -> Self {
        Self {
            base: RunConfig {
                run: crate::harness::config::RunSection {
                    algo: crate::harness::config::Algo::Ptft,
                    ..base.run.clone()
                },
                ..base
            },
            grid: vec![
                (
                    "ptft.alpha".into(),
                    DEFAULT_ALPHAS.iter().map(|a| a.to_string()).collect(),
                ),
                (
                    "ptft.schedule".into(),
                    DEFAULT_SCHEDULES
                        .iter()
                        .map(|s| match s {
                            crate::ibrl::Schedule::Fixed => "fixed".to_owned(),
                            crate::ibrl::Schedule::SoftQFilter => "soft_q_filter".to_owned(),
                        })
                        .collect(),
                ),
            ],
            seeds,
        }
    }

    pub fn combinations(&self) -> Vec<Combination> {
        let mut out = vec![Combination {
            assignments: Vec::new(),
        }];
        for (key, values) in &self.grid {
            out = out
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut a = c.assignments.clone();
                        a.push((key.clone(), v.clone()));
                        Combination { assignments: a }
                    })
                })
                .collect();
        }
        out
    }

    pub fn config_for(&self, combo: &Combination, seed: u64) -> Result<RunConfig> {
        self.base
            .with_overrides(combo.assignments.iter().map(|(k, v)| (k.as_str(), v.as_str())))?
            .with_overrides([("run.seed", seed.to_string())])
    }
}

#[derive(Clone, Debug)]
pub struct SweepRun {
    pub combination: Combination,
    pub seed: u64,
    pub dir: PathBuf,
    pub outcome: std::result::Result<RunSummary, String>,
}

#[derive(Debug, Serialize)]
struct AggregateRow<'a> {
    combination: &'a str,
    metric: &'a str,
    step: usize,
    n: usize,
    mean: f64,
    stderr: f64,
}

#[derive(Debug, Serialize)]
struct FailureRow<'a> {
    combination: &'a str,
    seed: u64,
    error: &'a str,
}

/// Mean and standard error of the mean; stderr is NaN below two samples.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// One metrics row: the step and each named metric value.
type MetricRow = (usize, Vec<(String, f64)>);

/// Per metric, per step, the samples across seeds.
type Series = Vec<(String, Vec<(usize, Vec<f64>)>)>;

fn read_metric_columns(path: &Path) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?
        .clone();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        let step: usize = rec[0]
            .parse()
            .map_err(|_| Error::Config(format!("{}: bad step `{}`", path.display(), &rec[0])))?;
        let vals = headers
            .iter()
            .zip(rec.iter())
            .skip(1)
            .map(|(h, v)| (h.to_owned(), v.parse::<f64>().unwrap_or(f64::NAN)))
            .collect();
        rows.push((step, vals));
    }
    Ok(rows)
}

/// Runs every (combination, seed) pair, then writes `aggregate.csv` and
/// `failures.csv` into `out`. Individual failures do not stop the sweep.
pub fn run_sweep(spec: &SweepSpec, out: &Path, exec: Exec) -> Result<Vec<SweepRun>> {
    fs::create_dir_all(out)?;
    let jobs: Vec<(Combination, u64)> = spec
        .combinations()
        .into_iter()
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c.clone(), s)))
        .collect();
    let runs = exec.map(&jobs, |(combo, seed)| {
        let dir = out.join(combo.label()).join(format!("seed_{seed}"));
        let outcome = spec
            .config_for(combo, *seed)
            .and_then(|cfg| run_experiment(&cfg, &dir, None, None))
            .map_err(|e| e.to_string());
        SweepRun {
            combination: combo.clone(),
            seed: *seed,
            dir,
            outcome,
        }
    });
    write_reports(spec, &runs, out)?;
    Ok(runs)
}

fn write_reports(spec: &SweepSpec, runs: &[SweepRun], out: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    // Headers are written explicitly so that empty reports still carry them.
    let writer = |name: &str| {
        csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(out.join(name))
    };
    let mut failures = writer("failures.csv").map_err(io)?;
    failures
        .write_record(["combination", "seed", "error"])
        .map_err(io)?;
    let mut agg = writer("aggregate.csv").map_err(io)?;
    agg.write_record(["combination", "metric", "step", "n", "mean", "stderr"])
        .map_err(io)?;
    for combo in spec.combinations() {
        let label = combo.label();
        // metric -> step -> samples, in first-seen order.
        let mut series: Series = Vec::new();
        for run in runs.iter().filter(|r| r.combination == combo) {
            if let Err(e) = &run.outcome {
                failures
                    .serialize(FailureRow {
                        combination: &label,
                        seed: run.seed,
                        error: e,
                    })
                    .map_err(io)?;
                continue;
            }
            for (step, vals) in read_metric_columns(&run.dir.join("metrics.csv"))? {
                for (metric, v) in vals {
                    let idx = match series.iter().position(|(m, _)| *m == metric) {
                        Some(i) => i,
                        None => {
                            series.push((metric.clone(), Vec::new()));
                            series.len() - 1
                        }
                    };
                    let steps = &mut series[idx].1;
                    match steps.iter_mut().find(|(s, _)| *s == step) {
                        Some((_, xs)) => xs.push(v),
                        None => steps.push((step, vec![v])),
                    }
                }
            }
        }
        for (metric, steps) in &series {
            for (step, xs) in steps {
                let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
                let (mean, stderr) = mean_stderr(&finite);
                agg.serialize(AggregateRow {
                    combination: &label,
                    metric,
                    step: *step,
                    n: finite.len(),
                    mean,
                    stderr,
                })
                .map_err(io)?;
            }
        }
    }
    failures.flush()?;
    agg.flush()?;
    Ok(())
}
