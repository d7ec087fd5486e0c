use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use castel_core::deadspot::{DeadspotParams, Model};
use castel_core::semantics::DEFAULT_STATE_LIMIT;
use castel_core::{Functions, Marking, Net, NetDoc, RoadNetwork};
use serde::Deserialize;

use crate::{Common, Failure, Outcome};

/// Scenario file: either a dead-spot parameter set or an explicit net,
/// plus run settings the command-line flags may override.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub deadspot: Option<DeadspotParams>,
    #[serde(default)]
    pub net: Option<NetDoc>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Confidence level of reported intervals.
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_horizon() -> f64 {
    100.0
}

fn default_runs() -> usize {
    100
}

fn default_seed() -> u64 {
    42
}

fn default_level() -> f64 {
    0.99
}

impl Default for ScenarioFile {
    fn default() -> Self {
        ScenarioFile {
            deadspot: None,
            net: None,
            horizon: default_horizon(),
            runs: default_runs(),
            seed: default_seed(),
            level: default_level(),
        }
    }
}

pub enum Subject {
    Deadspot(Box<Model>),
    Generic(Net),
}

impl Subject {
    pub fn net(&self) -> &Net {
        match self {
            Subject::Deadspot(m) => &m.net,
            Subject::Generic(n) => n,
        }
    }

    pub fn init(&self) -> &Marking {
        match self {
            Subject::Deadspot(m) => &m.init,
            Subject::Generic(n) => n.initial_marking(),
        }
    }

    pub fn road(&self) -> Option<&RoadNetwork> {
        match self {
            Subject::Deadspot(m) => Some(&m.road),
            Subject::Generic(_) => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Subject::Deadspot(_) => "deadspot",
            Subject::Generic(_) => "net",
        }
    }
}

/// Scenario with flags applied.
pub struct Scenario {
    pub file: ScenarioFile,
    pub params: Option<DeadspotParams>,
    pub horizon: f64,
    pub runs: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn load(common: &Common) -> Outcome<Scenario> {
        load(common).map_err(Failure::Config)
    }

    pub fn subject(&self) -> Outcome<Subject> {
        match (&self.params, &self.file.net) {
            (Some(p), _) => Ok(Subject::Deadspot(Box::new(Model::new(p.clone()).map_err(Failure::config)?))),
            (None, Some(doc)) => Ok(Subject::Generic(
                Net::from_doc(doc.clone(), &Functions::builtin()).map_err(Failure::config)?,
            )),
            (None, None) => unreachable!("load fills in the default model"),
        }
    }
}

fn load(common: &Common) -> anyhow::Result<Scenario> {
    let file: ScenarioFile = match &common.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ScenarioFile::default(),
    };
    let mut params = match (&file.deadspot, &file.net) {
        (Some(_), Some(_)) => bail!("a scenario holds either `deadspot` or `net`, not both"),
        (Some(p), None) => Some(p.clone()),
        (None, Some(_)) => None,
        (None, None) => Some(DeadspotParams::default()),
    };
    if common.no_jmp {
        match params.as_mut() {
            Some(p) => p.jmp = false,
            None => bail!("--no-jmp applies to dead-spot scenarios only"),
        }
    }
    if let Some(p) = &params {
        p.validate()?;
    }
    let horizon = common.horizon.unwrap_or(file.horizon);
    if !(horizon > 0.0) || !horizon.is_finite() {
        bail!("horizon must be a positive number, got {horizon}");
    }
    let runs = common.runs.unwrap_or(file.runs);
    if runs == 0 {
        bail!("runs must be at least 1");
    }
    if !(file.level > 0.0 && file.level < 1.0) {
        bail!("level must lie in (0, 1), got {}", file.level);
    }
    let seed = common.seed.unwrap_or(file.seed);
    Ok(Scenario {
        file,
        params,
        horizon,
        runs,
        seed,
    })
}

/// Reachability state limit, overridable through `CASTEL_STATE_LIMIT`.
pub fn state_limit() -> Outcome<usize> {
    match std::env::var("CASTEL_STATE_LIMIT") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::config(anyhow!("CASTEL_STATE_LIMIT must be a positive integer, got `{v}`"))),
        Err(_) => Ok(DEFAULT_STATE_LIMIT),
    }
}

pub fn read_text(path: &Path) -> Outcome<String> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)
}
