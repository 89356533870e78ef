//! Run configuration. Files are TOML with one table per section:
//!
//! ```toml
//! [run]
//! algo = "ibrl"
//! seed = 1
//!
//! [env]
//! name = "point-pick"
//!
//! [ibrl]
//! learning_rate = 1e-3
//! ```
//!
//! Every key is optional. Values are layered file < environment
//! (`IBRL_<SECTION>_<KEY>`, e.g. `IBRL_IBRL_LEARNING_RATE=3e-4`) < explicit
//! `section.key=value` overrides. The resolved config is written next to the
//! run's outputs.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::PtFtConfig;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::ibrl::{IbrlConfig, Mode};
use crate::imitation::BcConfig;

pub const SECTIONS: [&str; 5] = ["run", "env", "ibrl", "bc", "ptft"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Ibrl,
    IbrlActorOnly,
    Td3,
    Rlpd,
    Ptft,
    Sqil,
}

impl Algo {
    pub const ALL: [Algo; 6] = [
        Algo::Ibrl,
        Algo::IbrlActorOnly,
        Algo::Td3,
        Algo::Rlpd,
        Algo::Ptft,
        Algo::Sqil,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Ibrl => "ibrl",
            Algo::IbrlActorOnly => "ibrl-actor-only",
            Algo::Td3 => "td3",
            Algo::Rlpd => "rlpd",
            Algo::Ptft => "ptft",
            Algo::Sqil => "sqil",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            Algo::Ibrl => Mode::Full,
            Algo::IbrlActorOnly => Mode::ActorProposalOnly,
            _ => Mode::NoIl,
        }
    }

    pub fn needs_bc(self) -> bool {
        matches!(self, Algo::Ibrl | Algo::IbrlActorOnly | Algo::Ptft)
    }

    pub fn needs_demos(self) -> bool {
        self != Algo::Td3
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = if s == "rlpd+" { "rlpd" } else { s };
        Algo::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Algo::ALL.iter().map(|a| a.name()).collect();
            Error::Config(format!(
                "unknown algo `{s}` (expected one of {})",
                names.join(", ")
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub algo: Algo,
    pub seed: u64,
    /// Expert episodes to collect when no demo file is given. Defaults to 1
    /// on `point-reach` and 10 on `point-pick`.
    pub num_demos: Option<usize>,
    /// Gaussian noise on the scripted expert's actions.
    pub demo_noise: f64,
    /// Write elapsed time into `wall_ms` (0 otherwise, which makes reruns
    /// byte-identical).
    pub log_wall_clock: bool,
    /// Save learner checkpoints at every evaluation.
    pub checkpoints: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            algo: Algo::Ibrl,
            seed: 0,
            num_demos: None,
            demo_noise: 0.0,
            log_wall_clock: true,
            checkpoints: true,
        }
    }
}

/// Task selection plus optional overrides of its constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub name: String,
    pub horizon: Option<usize>,
    pub step_scale: Option<f64>,
    pub success_radius: Option<f64>,
    pub grasp_radius: Option<f64>,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            name: "point-reach".into(),
            horizon: None,
            step_scale: None,
            success_radius: None,
            grasp_radius: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvSection,
    pub ibrl: IbrlConfig,
    pub bc: BcConfig,
    pub ptft: PtFtConfig,
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key = value` overrides. Values are parsed as TOML
    /// literals, falling back to a bare string.
    pub fn with_overrides<K: AsRef<str>, V: AsRef<str>>(
        &self,
        overrides: impl IntoIterator<Item = (K, V)>,
    ) -> Result<Self> {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        for (key, raw) in overrides {
            let key = key.as_ref();
            let (section, field) = key
                .split_once('.')
                .filter(|(s, f)| SECTIONS.contains(s) && !f.is_empty())
                .ok_or_else(|| {
                    Error::Config(format!(
                        "override key `{key}` must look like <section>.<key> with section in {SECTIONS:?}"
                    ))
                })?;
            let entry = table
                .entry(section)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(sec) = entry else {
                unreachable!("sections serialize as tables")
            };
            sec.insert(field.to_owned(), parse_value(raw.as_ref()));
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    /// Overrides taken from `IBRL_<SECTION>_<KEY>` variables; other
    /// variables are ignored.
    pub fn with_env_vars(&self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut overrides = Vec::new();
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix("IBRL_") else {
                continue;
            };
            let rest = rest.to_ascii_lowercase();
            let Some((section, key)) = rest.split_once('_') else {
                return Err(Error::Config(format!(
                    "environment variable `{name}` names no key"
                )));
            };
            overrides.push((format!("{section}.{key}"), value));
        }
        self.with_overrides(overrides)
    }

    /// Fills defaults that depend on other keys and validates everything.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        let spec = EnvSpec::by_name(&self.env.name)?;
        out.env.name = spec.name.clone();
        out.env.horizon.get_or_insert(spec.horizon);
        out.env.step_scale.get_or_insert(spec.step_scale);
        out.env.success_radius.get_or_insert(spec.success_radius);
        out.env.grasp_radius.get_or_insert(spec.grasp_radius);
        out.run.num_demos.get_or_insert(default_num_demos(&spec));
        out.env_spec()?;
        out.ibrl_config().validate()?;
        out.ptft.validate()?;
        if out.run.demo_noise.is_nan() || out.run.demo_noise < 0.0 {
            return Err(Error::Config("run.demo_noise must be >= 0".into()));
        }
        if out.run.algo.needs_demos() && out.run.num_demos == Some(0) {
            return Err(Error::Config(format!(
                "algo {} needs run.num_demos >= 1",
                out.run.algo
            )));
        }
        if out.bc.steps == 0 || out.bc.batch_size == 0 || out.bc.eval_every == 0 {
            return Err(Error::Config(
                "bc.steps, bc.batch_size and bc.eval_every must be positive".into(),
            ));
        }
        Ok(out)
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        let mut spec = EnvSpec::by_name(&self.env.name)?;
        if let Some(h) = self.env.horizon {
            spec.horizon = h;
        }
        if let Some(v) = self.env.step_scale {
            spec.step_scale = v;
        }
        if let Some(v) = self.env.success_radius {
            spec.success_radius = v;
        }
        if let Some(v) = self.env.grasp_radius {
            spec.grasp_radius = v;
        }
        if spec.horizon == 0
            || spec.step_scale.is_nan()
            || spec.step_scale <= 0.0
            || spec.success_radius.is_nan()
            || spec.success_radius <= 0.0
            || spec.grasp_radius < 0.0
        {
            return Err(Error::Config(format!("invalid constants for env {}", spec.name)));
        }
        Ok(spec)
    }

    /// Learner settings with the mode implied by the algorithm.
    pub fn ibrl_config(&self) -> IbrlConfig {
        IbrlConfig {
            mode: self.run.algo.mode(),
            ..self.ibrl.clone()
        }
    }

    /// BC settings seeded from the run seed.
    pub fn bc_config(&self) -> BcConfig {
        BcConfig {
            seed: self.run.seed,
            ..self.bc.clone()
        }
    }

    pub fn num_demos(&self) -> Result<usize> {
        Ok(match self.run.num_demos {
            Some(n) => n,
            None => default_num_demos(&EnvSpec::by_name(&self.env.name)?),
        })
    }
}

fn default_num_demos(spec: &EnvSpec) -> usize {
    match spec.kind {
        crate::envs::TaskKind::PointReach => 1,
        crate::envs::TaskKind::PointPick => 10,
    }
}
