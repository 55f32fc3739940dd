//! Experiment cells, their evaluation and the resumable CSV sink.
//!
//! A cell is one `(method, σ, seed, threshold)` combination of a study. Every
//! cell rebuilds its demonstrations from the seed alone: the expert rollouts,
//! sampling windows and noise draws depend on neither the method nor `σ`, so
//! methods and noise levels are compared on common random numbers.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use robust_irl::baselines::mlt_irl;
use robust_irl::em::{robust_irl, EStepChoice};
use robust_irl::maxent::SolveOptions;
use robust_irl::mdp::{
    boltzmann_policy, evaluate_policy, ile, reward_table, value_iteration, RewardWeights, ValueFunction,
};
use robust_irl::obs::{ObservationKind, ObservationSequence};
use robust_irl::world::{child_seed, penetration_trial, Attacker, Domain, TrialOutcome, World};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: &str = "v1";

/// Column order of [`ResultRow`] in results files.
pub const COLUMNS: [&str; 14] = [
    "study",
    "domain",
    "method",
    "sigma",
    "seed",
    "threshold",
    "ile",
    "em_iterations",
    "estep_method",
    "wall_time_seconds",
    "outcome",
    "status",
    "theta",
    "config_hash",
];

/// Child index of a seed reserved for the penetration trial.
const TRIAL_STREAM: u64 = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Sweep,
    Attack,
    Convergence,
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Study::Sweep => "sweep",
            Study::Attack => "attack",
            Study::Convergence => "convergence",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub study: Study,
    pub method: Method,
    pub sigma: f64,
    pub seed: u64,
    pub threshold: Option<f64>,
}

/// Identity of a cell within one output file.
type CellKey = (Method, u64, u64, Option<u64>);

impl Cell {
    fn key(&self) -> CellKey {
        (
            self.method,
            self.sigma.to_bits(),
            self.seed,
            self.threshold.map(f64::to_bits),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub study: Study,
    pub domain: Domain,
    pub method: Method,
    pub sigma: f64,
    pub seed: u64,
    pub threshold: Option<f64>,
    pub ile: Option<f64>,
    pub em_iterations: usize,
    pub estep_method: String,
    pub wall_time_seconds: f64,
    pub outcome: Option<TrialOutcome>,
    /// `ok`, or the error that stopped the cell.
    pub status: String,
    /// Learned weights separated by `;`.
    pub theta: String,
    pub config_hash: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn key(&self) -> CellKey {
        (
            self.method,
            self.sigma.to_bits(),
            self.seed,
            self.threshold.map(f64::to_bits),
        )
    }

    /// Row with the wall-clock time zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> ResultRow {
        ResultRow {
            wall_time_seconds: 0.0,
            ..self.clone()
        }
    }
}

/// Cells of `study` in a fixed order.
pub fn cells(cfg: &ExperimentConfig, study: Study) -> Vec<Cell> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<Cell>, method, sigma, seed, threshold| {
        out.push(Cell {
            study,
            method,
            sigma,
            seed,
            threshold,
        })
    };
    match study {
        Study::Sweep => {
            for &sigma in &cfg.noise_levels {
                for &method in cfg.methods.iter().filter(|m| m.learns()) {
                    for &seed in &cfg.seeds {
                        push(&mut out, method, sigma, seed, None);
                    }
                }
            }
        }
        Study::Attack => {
            for &method in &cfg.methods {
                for &seed in &cfg.attack_seeds {
                    push(&mut out, method, cfg.attack_noise, seed, None);
                }
            }
        }
        Study::Convergence => {
            for &threshold in &cfg.thresholds {
                for &method in &cfg.convergence_methods {
                    for &seed in &cfg.seeds {
                        push(&mut out, method, cfg.convergence_noise, seed, Some(threshold));
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Everything shared by the cells of one config.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub world: World,
    pub hash: String,
    expert_value: ValueFunction,
}

impl Context {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let world = World::build(&cfg.world)?;
        let (expert_value, _) = value_iteration(world.mdp(), &world.true_reward()?)?;
        Ok(Self {
            cfg: cfg.clone(),
            world,
            hash: cfg.hash(),
            expert_value,
        })
    }

    /// Observation sequences of the demonstrations for `(σ, seed)`.
    pub fn demonstrations(&self, sigma: f64, seed: u64) -> Result<Vec<ObservationSequence>> {
        let expert = self.world.expert_policy(self.cfg.beta)?;
        let sensor = self.world.observation_model(ObservationKind::Fused, sigma)?;
        Ok(self
            .world
            .episodes(&expert, &sensor, self.cfg.demos, sigma, seed)?
            .into_iter()
            .map(|e| e.omega)
            .collect())
    }

    /// Learned weights, EM iteration count and E-step label.
    pub fn learn(
        &self,
        method: Method,
        sigma: f64,
        seed: u64,
        gibbs_epsilon: Option<f64>,
    ) -> Result<(RewardWeights, usize, String)> {
        let kind = method
            .observation_kind()
            .ok_or_else(|| HarnessError::Validation(format!("{method} does not learn")))?;
        let omegas = self.demonstrations(sigma, seed)?;
        let hm = self.world.hidden(kind, sigma)?;
        if method == Method::MLT {
            let out = mlt_irl(&omegas, &hm, &SolveOptions::default())?;
            return Ok((out.solution.theta, 0, String::new()));
        }
        let (estep, eps) = match gibbs_epsilon {
            Some(eps) => (EStepChoice::Gibbs, eps),
            None => (self.cfg.estep, self.cfg.gibbs_epsilon),
        };
        let out = robust_irl(&omegas, &hm, &self.cfg.em_options(seed, estep, eps))?;
        let label = out
            .trace
            .records
            .last()
            .map(|r| r.estep.to_string())
            .unwrap_or_default();
        Ok((out.theta, out.trace.iterations(), label))
    }

    /// Inverse learning error of `theta` against the ground truth.
    pub fn ile(&self, theta: &RewardWeights) -> Result<f64> {
        let mdp = self.world.mdp();
        let learned = boltzmann_policy(mdp, &reward_table(theta, self.world.feats())?, self.cfg.prior_beta)?;
        let v = evaluate_policy(mdp, &learned, &self.world.true_reward()?)?;
        Ok(ile(&v, &self.expert_value, self.cfg.ile_norm)?)
    }

    pub fn expert_value(&self) -> &ValueFunction {
        &self.expert_value
    }

    /// Evaluates one cell. Failures become a row with an error status.
    pub fn run_cell(&self, cell: &Cell) -> ResultRow {
        let clock = Instant::now();
        let mut row = ResultRow {
            study: cell.study,
            domain: self.cfg.domain(),
            method: cell.method,
            sigma: cell.sigma,
            seed: cell.seed,
            threshold: cell.threshold,
            ile: None,
            em_iterations: 0,
            estep_method: String::new(),
            wall_time_seconds: 0.0,
            outcome: None,
            status: "ok".into(),
            theta: String::new(),
            config_hash: self.hash.clone(),
        };
        if let Err(e) = self.fill(cell, &mut row) {
            row.status = format!("error: {e}");
        }
        row.wall_time_seconds = clock.elapsed().as_secs_f64();
        row
    }

    fn fill(&self, cell: &Cell, row: &mut ResultRow) -> Result<()> {
        let mut learned = None;
        if cell.method.learns() {
            let (theta, iterations, label) = self.learn(cell.method, cell.sigma, cell.seed, cell.threshold)?;
            row.ile = Some(self.ile(&theta)?);
            row.em_iterations = iterations;
            row.estep_method = label;
            row.theta = theta
                .as_slice()
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";");
            learned = Some(theta);
        }
        if cell.study == Study::Attack {
            let opts = self.cfg.trial_options();
            let kind = cell.method.observation_kind().unwrap_or(ObservationKind::Fused);
            let sensor = self.world.observation_model(kind, opts.noise)?;
            let policy = match &learned {
                Some(theta) => Some(boltzmann_policy(
                    self.world.mdp(),
                    &reward_table(theta, self.world.feats())?,
                    self.cfg.prior_beta,
                )?),
                None => None,
            };
            let attacker = policy.as_ref().map_or(Attacker::Random, Attacker::Planned);
            let trial_seed = child_seed(cell.seed, TRIAL_STREAM);
            row.outcome = Some(penetration_trial(&self.world, attacker, &sensor, &opts, trial_seed)?.outcome);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

fn header_line(hash: &str) -> String {
    format!("# config_hash={hash} schema={SCHEMA_VERSION}")
}

/// Output file of `study` for `domain` under `dir`.
pub fn csv_path(dir: &Path, study: Study, domain: Domain) -> PathBuf {
    dir.join(format!("{study}_{domain}.csv"))
}

/// Reads a results file, returning its config hash and rows.
pub fn read_rows(path: &Path) -> Result<(String, Vec<ResultRow>)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let hash = first
        .trim()
        .strip_prefix("# config_hash=")
        .and_then(|rest| rest.split_whitespace().next())
        .ok_or_else(|| HarnessError::Validation(format!("{} has no config hash header", path.display())))?
        .to_string();
    let mut rows = Vec::new();
    for row in csv::Reader::from_reader(reader).deserialize() {
        rows.push(row?);
    }
    Ok((hash, rows))
}

fn write_rows(path: &Path, hash: &str, rows: &[ResultRow]) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let mut file = File::create(&tmp)?;
        writeln!(file, "{}", header_line(hash))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut file);
        w.write_record(COLUMNS)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Appends rows to a results file as they arrive.
struct Sink {
    file: Mutex<File>,
}

impl Sink {
    /// Opens `path` for appending and returns the keys already present. A
    /// file written under a different config is refused.
    fn open(path: &Path, hash: &str) -> Result<(Self, BTreeSet<CellKey>)> {
        let mut done = BTreeSet::new();
        if path.exists() {
            let (found, rows) = read_rows(path)?;
            if found != hash {
                return Err(HarnessError::Validation(format!(
                    "{} was written with config hash {found}, not {hash}; use another output directory",
                    path.display()
                )));
            }
            done.extend(rows.iter().map(ResultRow::key));
            // Rewrite so a partially written last line does not linger.
            write_rows(path, hash, &rows)?;
        } else {
            write_rows(path, hash, &[])?;
        }
        let file = OpenOptions::new().append(true).open(path)?;
        Ok((Self { file: Mutex::new(file) }, done))
    }

    fn append(&self, row: &ResultRow) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(row)?;
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
        let mut file = self.file.lock().expect("sink lock");
        file.write_all(&bytes)?;
        file.flush()?;
        Ok(())
    }
}

/// Runs every cell of `study` that is not yet in the output file, `workers`
/// at a time. The file is rewritten sorted; the rows of this run's cells
/// are returned.
pub fn run_study(ctx: &Context, study: Study) -> Result<Vec<ResultRow>> {
    let dir = &ctx.cfg.output;
    fs::create_dir_all(dir)?;
    let path = csv_path(dir, study, ctx.cfg.domain());
    let (sink, done) = Sink::open(&path, &ctx.hash)?;
    let all = cells(&ctx.cfg, study);
    let todo: Vec<&Cell> = all.iter().filter(|c| !done.contains(&c.key())).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.cfg.workers)
        .build()
        .map_err(|e| HarnessError::Validation(e.to_string()))?;
    pool.install(|| todo.par_iter().try_for_each(|cell| sink.append(&ctx.run_cell(cell))))?;
    drop(sink);

    let (_, mut rows) = read_rows(&path)?;
    rows.sort_by(|a, b| {
        let ka = (a.threshold.map(|t| -t), a.sigma, a.method, a.seed);
        let kb = (b.threshold.map(|t| -t), b.sigma, b.method, b.seed);
        ka.partial_cmp(&kb).expect("finite keys")
    });
    rows.dedup_by_key(|r| r.key());
    write_rows(&path, &ctx.hash, &rows)?;
    let wanted: BTreeSet<CellKey> = all.iter().map(Cell::key).collect();
    Ok(rows.into_iter().filter(|r| wanted.contains(&r.key())).collect())
}

pub fn run_noise_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_study(&Context::new(cfg)?, Study::Sweep)
}

pub fn run_success_rate(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    if cfg.domain() != Domain::Patrol {
        return Err(HarnessError::Validation(
            "success-rate runs need the patrol domain".into(),
        ));
    }
    run_study(&Context::new(cfg)?, Study::Attack)
}

pub fn run_convergence_study(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_study(&Context::new(cfg)?, Study::Convergence)
}
