//! Experiment configuration.
//!
//! A config is a TOML file with experiment keys at the top level and the
//! world description under `[world]`. Any key can be overridden from the
//! environment: `RIRL_<KEY>` for top-level keys and `RIRL_WORLD_<KEY>` for
//! world keys, with values written as TOML (`RIRL_SEEDS="[1, 2]"`). Bare
//! words that are not valid TOML are taken as strings.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use robust_irl::em::{EStepChoice, EmOptions, GibbsOptions};
use robust_irl::mdp::Norm;
use robust_irl::obs::ObservationKind;
use robust_irl::world::{Domain, TrialOptions, World, WorldConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const ENV_PREFIX: &str = "RIRL_";

/// Learners and attackers compared by the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// EM over hidden trajectories with the fused sound and vision model.
    RobustIRL,
    RobustIRLSoundOnly,
    /// Vision readings only, uniform likelihood while occluded.
    RobustIRLVisionOnly,
    /// Most likely trajectory decoding followed by MaxEnt IRL.
    MLT,
    /// Leaves after a uniformly random wait; learns nothing.
    RandomAttack,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::RobustIRL,
        Method::RobustIRLSoundOnly,
        Method::RobustIRLVisionOnly,
        Method::MLT,
        Method::RandomAttack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::RobustIRL => "RobustIRL",
            Method::RobustIRLSoundOnly => "RobustIRLSoundOnly",
            Method::RobustIRLVisionOnly => "RobustIRLVisionOnly",
            Method::MLT => "MLT",
            Method::RandomAttack => "RandomAttack",
        }
    }

    /// Observation model the method learns and tracks with.
    pub fn observation_kind(self) -> Option<ObservationKind> {
        match self {
            Method::RobustIRL | Method::MLT => Some(ObservationKind::Fused),
            Method::RobustIRLSoundOnly => Some(ObservationKind::SoundOnly),
            Method::RobustIRLVisionOnly => Some(ObservationKind::VisionOnly),
            Method::RandomAttack => None,
        }
    }

    pub fn learns(self) -> bool {
        self != Method::RandomAttack
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::Validation(format!("unknown method '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Intensity noise levels of the noise sweep.
    pub noise_levels: Vec<f64>,
    /// Seeds of the noise sweep and convergence study.
    pub seeds: Vec<u64>,
    /// Seeds of the success-rate runs.
    pub attack_seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Demonstrations per learning run.
    pub demos: usize,
    /// Inverse temperature of the simulated expert.
    pub beta: f64,
    /// Inverse temperature of the policy prior inside EM and of the learned
    /// policy scored by ILE and followed by the attacker's predictions.
    pub prior_beta: f64,
    pub em_epsilon: f64,
    pub em_max_iterations: usize,
    pub estep: EStepChoice,
    pub enumeration_cap: f64,
    pub gibbs_epsilon: f64,
    pub gibbs_burn_in: usize,
    pub gibbs_thinning: usize,
    pub gibbs_block_size: usize,
    pub gibbs_max_blocks: usize,
    pub gibbs_window: usize,
    /// Gibbs stopping thresholds of the convergence study.
    pub thresholds: Vec<f64>,
    pub convergence_methods: Vec<Method>,
    pub convergence_noise: f64,
    /// Noise level of the success-rate runs, both while learning and during
    /// the trial.
    pub attack_noise: f64,
    pub risk: f64,
    pub epoch_budget: usize,
    pub max_wait: f64,
    pub patroller_present: bool,
    pub patroller_beta: f64,
    pub ile_norm: Norm,
    pub output: PathBuf,
    pub workers: usize,
    pub world: WorldConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let gibbs = GibbsOptions::default();
        let trial = TrialOptions::default();
        Self {
            name: "experiment".into(),
            noise_levels: vec![0.0, 0.05, 0.1, 0.2],
            seeds: (0..10).collect(),
            attack_seeds: (0..100).collect(),
            methods: vec![Method::RobustIRL, Method::MLT],
            demos: 10,
            beta: 5.0,
            prior_beta: 1.0,
            em_epsilon: 0.01,
            em_max_iterations: 100,
            estep: EStepChoice::Auto,
            enumeration_cap: robust_irl::maxent::DEFAULT_ENUMERATION_CAP,
            gibbs_epsilon: gibbs.epsilon,
            gibbs_burn_in: gibbs.burn_in,
            gibbs_thinning: gibbs.thinning,
            gibbs_block_size: gibbs.block_size,
            gibbs_max_blocks: gibbs.max_blocks,
            gibbs_window: gibbs.window,
            thresholds: vec![0.2, 0.1, 0.05, 0.01],
            convergence_methods: vec![Method::RobustIRLSoundOnly, Method::RobustIRL],
            convergence_noise: 0.1,
            attack_noise: trial.noise,
            risk: trial.risk,
            epoch_budget: trial.epoch_budget,
            max_wait: trial.max_wait,
            patroller_present: trial.patroller_present,
            patroller_beta: trial.patroller_beta,
            ile_norm: Norm::L2,
            output: PathBuf::from("results"),
            workers: 1,
            world: WorldConfig::drone(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text without environment overrides.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Validation(e.to_string()))?;
        Self::from_table(table)
    }

    fn from_table(mut table: toml::Table) -> Result<Self> {
        // The world defaults are the drone's; a patrol world takes every key
        // it leaves out from the patrol defaults.
        if let Some(world) = table.get_mut("world").and_then(|w| w.as_table_mut()) {
            if world.get("domain").and_then(|d| d.as_str()) == Some("patrol") {
                let defaults = toml::Table::try_from(WorldConfig::patrol())
                    .map_err(|e| HarnessError::Validation(e.to_string()))?;
                for (key, value) in defaults {
                    world.entry(key).or_insert(value);
                }
            }
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or the defaults when absent) and applies overrides from
    /// the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        Self::load_with_env(path, std::env::vars())
    }

    pub fn load_with_env(path: Option<&Path>, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| HarnessError::Validation(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| HarnessError::Validation(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        apply_overrides(&mut table, vars)?;
        Self::from_table(table)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(HarnessError::Validation(msg.into()));
        if self.seeds.is_empty() || self.attack_seeds.is_empty() {
            return bad("seed lists must be nonempty");
        }
        if self.noise_levels.is_empty() || self.noise_levels.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise_levels must be a nonempty list of nonnegative numbers");
        }
        if self.methods.is_empty() || self.convergence_methods.is_empty() {
            return bad("method lists must be nonempty");
        }
        if self.convergence_methods.iter().any(|m| !m.learns()) {
            return bad("convergence_methods must all learn");
        }
        if self.thresholds.is_empty() || self.thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return bad("thresholds must be a nonempty list of positive numbers");
        }
        if self.demos == 0 || self.workers == 0 || self.em_max_iterations == 0 {
            return bad("demos, workers and em_max_iterations must be positive");
        }
        if !(self.beta > 0.0 && self.prior_beta > 0.0 && self.em_epsilon > 0.0 && self.gibbs_epsilon > 0.0) {
            return bad("beta, prior_beta, em_epsilon and gibbs_epsilon must be positive");
        }
        if self.gibbs_block_size == 0
            || self.gibbs_thinning == 0
            || self.gibbs_max_blocks == 0
            || self.gibbs_window == 0
        {
            return bad("gibbs block size, thinning, block count and window must be positive");
        }
        for s in [self.attack_noise, self.convergence_noise] {
            if !(s.is_finite() && s >= 0.0) {
                return bad("noise levels must be nonnegative");
            }
        }
        if !(self.risk > 0.0 && self.risk < 1.0) {
            return bad("risk must lie in (0, 1)");
        }
        World::build(&self.world).map_err(|e| HarnessError::Validation(format!("world: {e}")))?;
        Ok(())
    }

    pub fn domain(&self) -> Domain {
        self.world.domain
    }

    /// EM options for a run with `seed`, Gibbs stopping at `gibbs_epsilon`.
    pub fn em_options(&self, seed: u64, estep: EStepChoice, gibbs_epsilon: f64) -> EmOptions {
        EmOptions {
            em_epsilon: self.em_epsilon,
            max_iterations: self.em_max_iterations,
            beta: self.prior_beta,
            estep,
            gibbs: GibbsOptions {
                epsilon: gibbs_epsilon,
                burn_in: self.gibbs_burn_in,
                thinning: self.gibbs_thinning,
                block_size: self.gibbs_block_size,
                max_blocks: self.gibbs_max_blocks,
                window: self.gibbs_window,
                seed,
            },
            seed,
            enumeration_cap: self.enumeration_cap,
            ..Default::default()
        }
    }

    pub fn trial_options(&self) -> TrialOptions {
        TrialOptions {
            risk: self.risk,
            epoch_budget: self.epoch_budget,
            max_wait: self.max_wait,
            patroller_present: self.patroller_present,
            patroller_beta: self.patroller_beta,
            noise: self.attack_noise,
        }
    }

    /// Hex digest of everything that can change a result. Seed lists, the
    /// output directory and the worker count are left out, so runs over
    /// different seed ranges can share one results file.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.seeds.clear();
        canon.attack_seeds.clear();
        canon.output = PathBuf::new();
        canon.workers = 1;
        let text = toml::to_string(&canon).expect("config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }

    /// Replaces both seed lists with `range`.
    pub fn set_seed_range(&mut self, range: std::ops::Range<u64>) -> Result<()> {
        if range.is_empty() {
            return Err(HarnessError::Validation("seed range is empty".into()));
        }
        self.seeds = range.clone().collect();
        self.attack_seeds = range.collect();
        Ok(())
    }
}

/// Parses `a..b` (end exclusive).
pub fn parse_seed_range(text: &str) -> Result<std::ops::Range<u64>> {
    let bad = || HarnessError::Validation(format!("seed range '{text}' is not of the form a..b"));
    let (a, b) = text.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if b <= a {
        return Err(HarnessError::Validation(format!("seed range '{text}' is empty")));
    }
    Ok(a..b)
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Writes every `RIRL_*` variable into `table`.
pub fn apply_overrides(table: &mut toml::Table, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let name = key[ENV_PREFIX.len()..].to_ascii_lowercase();
        let value = parse_value(&raw);
        match name.strip_prefix("world_") {
            Some(field) => {
                let world = table
                    .entry("world")
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                let world = world
                    .as_table_mut()
                    .ok_or_else(|| HarnessError::Validation("'world' must be a table".into()))?;
                world.insert(field.to_string(), value);
            }
            None if name.is_empty() => {}
            None => {
                table.insert(name, value);
            }
        }
    }
    Ok(())
}
