//! Gridworld domains, expert simulation, observation generation and
//! penetration trials.
//!
//! Two domains share one builder:
//!
//! * the drone corridor, a straight single-row route patrolled back and
//!   forth with actions `forward`, `turn_around` and `hover`;
//! * the patrol hallway, an arbitrary connected route with four headings and
//!   actions `turn` (a quarter turn clockwise), `forward` and `noop`.
//!
//! The intended effect of an action happens with probability `success_prob`
//! and each other action's effect with an equal share of the remainder.
//! Blocked forward moves leave the expert in place. Both domains use the
//! features "moved forward" and "turned".
//!
//! Layouts are ASCII grids: `#` wall, `.` free, `G` goal, `L` learner (and
//! listener) and `P` patroller start. The patrolled route is the connected
//! set of `.` cells containing `P`; `L` and `G` are never part of it.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::em::HiddenMdp;
use crate::error::{Error, Result};
use crate::maxent::Trajectory;
use crate::mdp::{boltzmann_policy, reward_table, FeatureSet, Heading, Mdp, Policy, RewardWeights, State};
use crate::obs::{
    fit_epoch, intensity_at, IntensitySample, MotionSegment, ObservationKind, ObservationModel, ObservationSequence,
    PairGeometry, Point, StepObservation,
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Drone,
    Patrol,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Drone => "drone",
            Domain::Patrol => "patrol",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "drone" => Ok(Domain::Drone),
            "patrol" => Ok(Domain::Patrol),
            other => Err(Error::Config(format!("unknown domain '{other}'"))),
        }
    }
}

pub const DRONE_LAYOUT: &str = "
##############
#L#P.........#
##############
";

pub const PATROL_LAYOUT: &str = "
##############
#P..........##
###########.G#
###########.##
##########L.##
###########.##
##############
";

/// Declarative description of a world. Every field has a default, so a
/// config file only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub domain: Domain,
    pub layout: String,
    /// Meters per cell.
    pub cell_size: f64,
    /// Overrides the listener position (defaults to the `L` cell center).
    pub listener_x: Option<f64>,
    pub listener_y: Option<f64>,
    /// Direction the hidden learner faces.
    pub learner_heading: Heading,
    /// Field of view range, cells.
    pub view_range: f64,
    pub view_half_angle_deg: f64,
    /// The learner cannot be seen while it stays on its start cell.
    pub learner_hidden_at_start: bool,
    pub epoch_duration: f64,
    pub samples_per_second: f64,
    pub sample_window_min_fraction: f64,
    pub source_strength: f64,
    pub intensity_ceiling: f64,
    pub success_prob: f64,
    pub theta_true: Vec<f64>,
    pub horizon: usize,
    pub discount: f64,
    /// Likelihood bandwidth at zero noise, reciprocal-intensity units.
    pub likelihood_sigma: f64,
    /// Bandwidth added per unit of intensity noise.
    pub likelihood_sigma_per_noise: f64,
    /// Weight of each epoch's fitted-curve standard error in its bandwidth.
    pub likelihood_curve_weight: f64,
    pub vision_accuracy: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self::drone()
    }
}

impl WorldConfig {
    pub fn drone() -> Self {
        Self {
            domain: Domain::Drone,
            layout: DRONE_LAYOUT.trim().to_string(),
            cell_size: 1.0,
            listener_x: None,
            listener_y: None,
            learner_heading: Heading::East,
            view_range: 3.0,
            view_half_angle_deg: 45.0,
            learner_hidden_at_start: true,
            epoch_duration: 1.0,
            samples_per_second: 20.0,
            sample_window_min_fraction: 0.3,
            source_strength: 100.0,
            intensity_ceiling: 1e4,
            success_prob: 0.9,
            theta_true: vec![1.0, -0.1],
            horizon: 14,
            discount: 0.95,
            likelihood_sigma: 0.005,
            likelihood_sigma_per_noise: 0.0,
            likelihood_curve_weight: 1.0,
            vision_accuracy: crate::obs::DEFAULT_VISION_ACCURACY,
        }
    }

    pub fn patrol() -> Self {
        Self {
            domain: Domain::Patrol,
            layout: PATROL_LAYOUT.trim().to_string(),
            // A wheeled robot is about 6 dB quieter than a drone's rotors.
            source_strength: 25.0,
            ..Self::drone()
        }
    }

    pub fn sampling(&self) -> Sampling {
        Sampling {
            samples_per_second: self.samples_per_second,
            window_min_fraction: self.sample_window_min_fraction,
            intensity_ceiling: self.intensity_ceiling,
        }
    }

    /// Likelihood bandwidth used at observation noise `noise`.
    pub fn likelihood_sigma_at(&self, noise: f64) -> f64 {
        self.likelihood_sigma + self.likelihood_sigma_per_noise * noise
    }
}

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Wall,
    Free,
    Goal,
}

/// Parsed ASCII grid. Coordinates are `(col, row)` with rows growing
/// downward.
#[derive(Clone, Debug)]
pub struct Layout {
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
    route: Vec<bool>,
    pub learner: (usize, usize),
    pub patroller: Option<(usize, usize)>,
    pub goal: Option<(usize, usize)>,
}

impl Layout {
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if rows.is_empty() {
            return Err(Error::Config("layout is empty".into()));
        }
        let width = rows.iter().map(|r| r.chars().count()).max().unwrap_or(0);
        let height = rows.len();
        let mut cells = vec![Cell::Wall; width * height];
        let mut route = vec![false; width * height];
        let mut learner = None;
        let mut patroller = None;
        let mut goal = None;
        for (y, row) in rows.iter().enumerate() {
            for (x, ch) in row.chars().enumerate() {
                let i = y * width + x;
                let set_once = |slot: &mut Option<(usize, usize)>, what: &str| {
                    if slot.replace((x, y)).is_some() {
                        return Err(Error::Config(format!("layout has more than one '{what}'")));
                    }
                    Ok(())
                };
                match ch {
                    '#' => {}
                    '.' => {
                        cells[i] = Cell::Free;
                        route[i] = true;
                    }
                    'P' => {
                        cells[i] = Cell::Free;
                        route[i] = true;
                        set_once(&mut patroller, "P")?;
                    }
                    'L' => {
                        cells[i] = Cell::Free;
                        set_once(&mut learner, "L")?;
                    }
                    'G' => {
                        cells[i] = Cell::Goal;
                        set_once(&mut goal, "G")?;
                    }
                    other => return Err(Error::Config(format!("unknown layout character '{other}'"))),
                }
            }
        }
        let learner = learner.ok_or_else(|| Error::Config("layout needs an 'L' cell".into()))?;
        Ok(Self {
            width,
            height,
            cells,
            route,
            learner,
            patroller,
            goal,
        })
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.width, i / self.width)
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.cells[self.index(x, y)]
    }

    pub fn is_open(&self, i: usize) -> bool {
        self.cells[i] != Cell::Wall
    }

    /// Neighbor of cell `i` one step along `h`, if inside the grid.
    pub fn step(&self, i: usize, h: Heading) -> Option<usize> {
        let (x, y) = self.coords(i);
        let (dx, dy) = h.delta();
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            return None;
        }
        Some(self.index(nx as usize, ny as usize))
    }

    /// Route cells connected to the patroller start, row-major.
    pub fn route_cells(&self) -> Vec<usize> {
        let Some((px, py)) = self.patroller else {
            return Vec::new();
        };
        let start = self.index(px, py);
        let mut seen = vec![false; self.cells.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            for h in Heading::ALL {
                if let Some(j) = self.step(i, h) {
                    if self.route[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        (0..self.cells.len()).filter(|&i| seen[i]).collect()
    }

    /// Breadth-first shortest path over open cells, both ends included.
    pub fn shortest_path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let mut prev = vec![usize::MAX; self.cells.len()];
        let mut queue = VecDeque::from([from]);
        prev[from] = from;
        while let Some(i) = queue.pop_front() {
            if i == to {
                let mut path = vec![to];
                let mut cur = to;
                while cur != from {
                    cur = prev[cur];
                    path.push(cur);
                }
                path.reverse();
                return Some(path);
            }
            for h in Heading::ALL {
                if let Some(j) = self.step(i, h) {
                    if self.is_open(j) && prev[j] == usize::MAX {
                        prev[j] = i;
                        queue.push_back(j);
                    }
                }
            }
        }
        None
    }

    fn center(&self, i: usize, cell_size: f64) -> Point {
        let (x, y) = self.coords(i);
        Point::new((x as f64 + 0.5) * cell_size, (y as f64 + 0.5) * cell_size)
    }

    /// Whether the straight line between two cell centers stays off walls.
    fn line_of_sight(&self, a: usize, b: usize) -> bool {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        let (ax, ay, bx, by) = (ax as f64 + 0.5, ay as f64 + 0.5, bx as f64 + 0.5, by as f64 + 0.5);
        let steps = 64;
        (1..steps).all(|k| {
            let t = k as f64 / steps as f64;
            let x = (ax + t * (bx - ax)).floor() as usize;
            let y = (ay + t * (by - ay)).floor() as usize;
            self.cells[self.index(x, y)] != Cell::Wall
        })
    }

    /// Whether an observer on `from` facing `h` sees cell `to`.
    pub fn sees(&self, from: usize, h: Heading, to: usize, range: f64, half_angle_deg: f64) -> bool {
        if from == to {
            return true;
        }
        let (fx, fy) = self.coords(from);
        let (tx, ty) = self.coords(to);
        let dx = tx as f64 - fx as f64;
        let dy = ty as f64 - fy as f64;
        let dist = (dx * dx + dy * dy).sqrt();
        if dist > range + 1e-9 {
            return false;
        }
        let (hx, hy) = h.delta();
        let cos = (dx * hx as f64 + dy * hy as f64) / dist;
        if cos < half_angle_deg.to_radians().cos() - 1e-9 {
            return false;
        }
        self.line_of_sight(from, to)
    }
}

// ---------------------------------------------------------------------------
// World
// ---------------------------------------------------------------------------

/// A built domain: the expert MDP and everything needed to observe it.
#[derive(Clone, Debug)]
pub struct World {
    cfg: WorldConfig,
    layout: Layout,
    /// Route cells (layout indices) in state order.
    route: Vec<usize>,
    headings: Vec<Heading>,
    mdp: Mdp,
    feats: FeatureSet,
    theta_true: RewardWeights,
    geometry: PairGeometry,
    listener: Point,
    learner_view: Vec<bool>,
    forward_action: usize,
    turn_action: usize,
}

impl World {
    pub fn build(cfg: &WorldConfig) -> Result<Self> {
        let layout = Layout::parse(&cfg.layout)?;
        if !(cfg.cell_size > 0.0 && cfg.epoch_duration > 0.0 && cfg.samples_per_second > 0.0) {
            return Err(Error::Config(
                "cell size, epoch duration and sample rate must be positive".into(),
            ));
        }
        if !(cfg.sample_window_min_fraction > 0.0 && cfg.sample_window_min_fraction <= 1.0) {
            return Err(Error::Config("sample_window_min_fraction must lie in (0, 1]".into()));
        }
        if !(cfg.success_prob > 0.0 && cfg.success_prob <= 1.0) {
            return Err(Error::Config("success_prob must lie in (0, 1]".into()));
        }
        if cfg.theta_true.len() != 2 {
            return Err(Error::Config("theta_true needs one weight per feature (2)".into()));
        }
        if layout.patroller.is_none() {
            return Err(Error::Config("layout needs a 'P' cell".into()));
        }
        if cfg.domain == Domain::Patrol && layout.goal.is_none() {
            return Err(Error::Config("patrol layouts need a 'G' cell".into()));
        }
        let route = layout.route_cells();

        let (headings, actions, forward_action, turn_action) = match cfg.domain {
            Domain::Drone => {
                let rows: Vec<usize> = route.iter().map(|&i| layout.coords(i).1).collect();
                let cols: Vec<usize> = route.iter().map(|&i| layout.coords(i).0).collect();
                let headings = if rows.iter().all(|&r| r == rows[0]) {
                    vec![Heading::East, Heading::West]
                } else if cols.iter().all(|&c| c == cols[0]) {
                    vec![Heading::North, Heading::South]
                } else {
                    return Err(Error::Config("drone route must be a straight corridor".into()));
                };
                (headings, vec!["forward", "turn_around", "hover"], 0, 1)
            }
            Domain::Patrol => (Heading::ALL.to_vec(), vec!["turn", "forward", "noop"], 1, 0),
        };

        let n_h = headings.len();
        let n_a = actions.len();
        let states: Vec<State> = (0..route.len())
            .flat_map(|c| headings.iter().map(move |&heading| State { cell: c, heading }))
            .collect();
        let route_pos = |layout_cell: usize| route.iter().position(|&c| c == layout_cell);
        let heading_idx = |h: Heading| headings.iter().position(|&x| x == h).expect("heading in set");

        // Effect of action `b` taken in state `s`, plus whether it moved.
        let effect = |s: usize, b: usize| -> (usize, bool) {
            let cell = s / n_h;
            let h = headings[s % n_h];
            if b == forward_action {
                match layout.step(route[cell], h).and_then(route_pos) {
                    Some(next) => (next * n_h + heading_idx(h), true),
                    None => (s, false),
                }
            } else if b == turn_action {
                let turned = match cfg.domain {
                    Domain::Drone => h.reverse(),
                    Domain::Patrol => h.turn_cw(),
                };
                (cell * n_h + heading_idx(turned), false)
            } else {
                (s, false)
            }
        };

        let other = if n_a > 1 {
            (1.0 - cfg.success_prob) / (n_a - 1) as f64
        } else {
            0.0
        };
        let successors: Vec<Vec<(usize, f64)>> = (0..states.len() * n_a)
            .map(|p| {
                let (s, a) = (p / n_a, p % n_a);
                (0..n_a)
                    .map(|b| (effect(s, b).0, if b == a { cfg.success_prob } else { other }))
                    .collect()
            })
            .collect();
        let start = vec![1.0 / states.len() as f64; states.len()];
        let mdp = Mdp::new(
            states,
            actions.iter().map(|s| s.to_string()).collect(),
            successors,
            start,
            cfg.horizon,
            cfg.discount,
        )?;
        let feats = FeatureSet::from_fn(&mdp, 2, |s, a| {
            vec![a == forward_action && effect(s, a).1, a == turn_action]
        })?;
        let theta_true = RewardWeights::new(cfg.theta_true.clone())?;

        let speed = cfg.cell_size / cfg.epoch_duration;
        let positions: Vec<Point> = (0..mdp.n_states())
            .map(|s| layout.center(route[s / n_h], cfg.cell_size))
            .collect();
        let segments = (0..mdp.n_pairs())
            .map(|p| {
                let (s, a) = (p / n_a, p % n_a);
                let here = positions[s];
                if a == forward_action && effect(s, a).1 {
                    let (dx, dy) = headings[s % n_h].delta();
                    MotionSegment {
                        p0: here,
                        v: Point::new(dx as f64 * speed, dy as f64 * speed),
                        t0: 0.0,
                        duration: cfg.epoch_duration,
                    }
                } else {
                    MotionSegment::stationary(here, cfg.epoch_duration)
                }
            })
            .collect();
        let geometry = PairGeometry {
            n_actions: n_a,
            segments,
            positions,
            neighbor_radius: cfg.cell_size * 1.01,
        };

        let learner_cell = layout.index(layout.learner.0, layout.learner.1);
        let default_listener = layout.center(learner_cell, cfg.cell_size);
        let listener = Point::new(
            cfg.listener_x.unwrap_or(default_listener.x),
            cfg.listener_y.unwrap_or(default_listener.y),
        );
        let learner_view = (0..mdp.n_states())
            .map(|s| {
                layout.sees(
                    learner_cell,
                    cfg.learner_heading,
                    route[s / n_h],
                    cfg.view_range,
                    cfg.view_half_angle_deg,
                )
            })
            .collect();

        Ok(Self {
            cfg: cfg.clone(),
            layout,
            route,
            headings,
            mdp,
            feats,
            theta_true,
            geometry,
            listener,
            learner_view,
            forward_action,
            turn_action,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn feats(&self) -> &FeatureSet {
        &self.feats
    }

    pub fn theta_true(&self) -> &RewardWeights {
        &self.theta_true
    }

    pub fn geometry(&self) -> &PairGeometry {
        &self.geometry
    }

    pub fn listener(&self) -> Point {
        self.listener
    }

    pub fn headings(&self) -> &[Heading] {
        &self.headings
    }

    pub fn route(&self) -> &[usize] {
        &self.route
    }

    pub fn forward_action(&self) -> usize {
        self.forward_action
    }

    pub fn turn_action(&self) -> usize {
        self.turn_action
    }

    /// States the hidden learner can see.
    pub fn learner_view(&self) -> &[bool] {
        &self.learner_view
    }

    /// Layout cell of state `s`.
    pub fn state_cell(&self, s: usize) -> usize {
        self.route[s / self.headings.len()]
    }

    pub fn state_heading(&self, s: usize) -> Heading {
        self.headings[s % self.headings.len()]
    }

    /// Observation model of `kind` whose bandwidth matches noise `noise`.
    pub fn observation_model(&self, kind: ObservationKind, noise: f64) -> Result<ObservationModel> {
        ObservationModel::new(
            kind,
            self.listener,
            self.cfg.likelihood_sigma_at(noise),
            self.cfg.source_strength,
            &self.geometry,
            self.learner_view.clone(),
        )?
        .with_vision_accuracy(self.cfg.vision_accuracy)?
        .with_curve_weight(self.cfg.likelihood_curve_weight)
    }

    pub fn hidden(&self, kind: ObservationKind, noise: f64) -> Result<HiddenMdp> {
        HiddenMdp::new(
            self.mdp.clone(),
            self.feats.clone(),
            self.observation_model(kind, noise)?,
        )
    }

    /// Boltzmann policy of the ground-truth reward.
    pub fn expert_policy(&self, beta: f64) -> Result<Policy> {
        boltzmann_policy(&self.mdp, &reward_table(&self.theta_true, &self.feats)?, beta)
    }

    pub fn true_reward(&self) -> Result<Vec<f64>> {
        reward_table(&self.theta_true, &self.feats)
    }

    /// Patroller start state: the `P` cell facing the first heading whose
    /// forward move stays on the route.
    fn patroller_start(&self) -> usize {
        let (px, py) = self.layout.patroller.expect("validated at build");
        let cell = self.layout.index(px, py);
        let c = self.route.iter().position(|&r| r == cell).expect("P is on the route");
        let n_h = self.headings.len();
        let h = (0..n_h)
            .find(|&h| {
                self.layout
                    .step(cell, self.headings[h])
                    .is_some_and(|j| self.route.contains(&j))
            })
            .unwrap_or(0);
        c * n_h + h
    }
}

/// Builds the drone corridor and returns it with its ground-truth weights.
pub fn build_drone_domain(cfg: &WorldConfig) -> Result<(HiddenMdp, RewardWeights)> {
    if cfg.domain != Domain::Drone {
        return Err(Error::Config("expected a drone configuration".into()));
    }
    let world = World::build(cfg)?;
    Ok((world.hidden(ObservationKind::Fused, 0.0)?, world.theta_true.clone()))
}

/// Builds the patrol hallway and returns it with its ground-truth weights.
pub fn build_patrol_domain(cfg: &WorldConfig) -> Result<(HiddenMdp, RewardWeights)> {
    if cfg.domain != Domain::Patrol {
        return Err(Error::Config("expected a patrol configuration".into()));
    }
    let world = World::build(cfg)?;
    Ok((world.hidden(ObservationKind::Fused, 0.0)?, world.theta_true.clone()))
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Index drawn from unnormalized weights.
fn draw<R: Rng + ?Sized>(weights: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let total: f64 = weights.clone().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    last
}

/// RNG for one named stream of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of the `index`-th child of `seed`.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    stream_rng(seed, index + 1).next_u64()
}

pub fn simulate_expert_with<R: Rng + ?Sized>(mdp: &Mdp, pi: &Policy, horizon: usize, rng: &mut R) -> Trajectory {
    let mut s = draw(mdp.start().iter().copied(), rng);
    let mut steps = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let a = draw(pi.row(s).iter().copied(), rng);
        steps.push((s, a));
        if t < horizon {
            let succ = mdp.successors(s, a);
            s = succ[draw(succ.iter().map(|&(_, p)| p), rng)].0;
        }
    }
    Trajectory::new(steps)
}

/// Rollout of `horizon + 1` steps from the start distribution.
pub fn simulate_expert(mdp: &Mdp, pi: &Policy, horizon: usize, seed: u64) -> Trajectory {
    simulate_expert_with(mdp, pi, horizon, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// How intensity samples are taken within an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub samples_per_second: f64,
    /// Smallest sampled window as a fraction of the epoch.
    pub window_min_fraction: f64,
    /// Intensities are capped here (also used where the source would sit on
    /// the listener).
    pub intensity_ceiling: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedObservations {
    pub omega: ObservationSequence,
    /// Samples capped at the intensity ceiling.
    pub clamped: usize,
}

/// Random sub-window samples of one epoch's true intensity curve.
fn epoch_samples<R: Rng + ?Sized>(
    seg: &MotionSegment,
    obs: &ObservationModel,
    sampling: &Sampling,
    rng: &mut R,
) -> (Vec<IntensitySample>, usize) {
    let duration = seg.duration;
    let frac = rng.random_range(sampling.window_min_fraction..=1.0);
    let w0 = rng.random::<f64>() * (1.0 - frac) * duration;
    let w1 = w0 + frac * duration;
    let n = (sampling.samples_per_second * duration).round() as usize;
    let mut clamped = 0;
    let samples = (0..n)
        .map(|i| i as f64 / sampling.samples_per_second)
        .filter(|&t| t >= w0 - 1e-12 && t <= w1 + 1e-12)
        .map(|t| {
            let raw = intensity_at(seg, obs.listener(), obs.source_strength(), t).unwrap_or(f64::INFINITY);
            let intensity = if raw > sampling.intensity_ceiling {
                clamped += 1;
                sampling.intensity_ceiling
            } else {
                raw
            };
            IntensitySample { t, intensity }
        })
        .collect();
    (samples, clamped)
}

/// One epoch's observation of the pair `(s, a)`.
fn observe_pair<R: Rng>(
    s: usize,
    a: usize,
    obs: &ObservationModel,
    sampling: &Sampling,
    noise: f64,
    rngs: &mut [R; 3],
) -> (StepObservation, usize) {
    let seg = obs.geometry().segments[s * obs.geometry().n_actions + a];
    let [window_rng, noise_rng, vision_rng] = rngs;
    let (samples, clamped) = epoch_samples(&seg, obs, sampling, window_rng);
    let noisy = crate::obs::add_noise_with(&samples, noise, noise_rng);
    let sound = fit_epoch(&noisy, seg.duration);
    let vision =
        (obs.kind() != ObservationKind::SoundOnly && obs.in_view(s)).then(|| obs.sample_reading(s, a, vision_rng));
    (StepObservation { sound, vision }, clamped)
}

/// Per-epoch sound fit (and vision reading when in view) of a trajectory.
///
/// Window placement, noise and vision draws come from separate streams of
/// `seed`, so the same seed gives the same windows at every noise level.
pub fn generate_observations(
    traj: &Trajectory,
    obs: &ObservationModel,
    sampling: &Sampling,
    noise: f64,
    seed: u64,
) -> Result<GeneratedObservations> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Precondition(format!("noise level {noise} must be nonnegative")));
    }
    let n_a = obs.geometry().n_actions;
    let n_s = obs.geometry().positions.len();
    let mut rngs = [stream_rng(seed, 1), stream_rng(seed, 2), stream_rng(seed, 3)];
    let mut clamped = 0;
    let mut epochs = Vec::with_capacity(traj.len());
    for &(s, a) in traj.steps() {
        if s >= n_s || a >= n_a {
            return Err(Error::Validation(format!("step ({s}, {a}) out of range")));
        }
        let (o, c) = observe_pair(s, a, obs, sampling, noise, &mut rngs);
        clamped += c;
        epochs.push(o);
    }
    Ok(GeneratedObservations {
        omega: ObservationSequence { epochs },
        clamped,
    })
}

/// A simulated demonstration: the hidden truth and what the learner saw.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub true_trajectory: Trajectory,
    pub omega: ObservationSequence,
    pub seed: u64,
}

impl Episode {
    /// Trajectory rows followed by observation rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,epoch,state,action,a,b,c,residual,sample_count,vision_state,vision_action\n");
        for (i, &(s, a)) in self.true_trajectory.steps().iter().enumerate() {
            out += &format!("trajectory,{i},{s},{a},,,,,,,\n");
        }
        for (i, e) in self.omega.epochs.iter().enumerate() {
            let [a, b, c] = e.sound.coeffs;
            let (vs, va) = e.vision.map_or((String::new(), String::new()), |r| {
                (r.state.to_string(), r.action.to_string())
            });
            out += &format!(
                "observation,{i},,,{a:e},{b:e},{c:e},{:e},{},{vs},{va}\n",
                e.sound.fit_residual, e.sound.sample_count
            );
        }
        out
    }
}

impl World {
    /// `n` demonstrations from `expert` observed through `obs`. Demo `i`
    /// uses child seed `i` of `seed` for both the rollout and the sensors.
    pub fn episodes(
        &self,
        expert: &Policy,
        obs: &ObservationModel,
        n: usize,
        noise: f64,
        seed: u64,
    ) -> Result<Vec<Episode>> {
        (0..n)
            .map(|i| {
                let s = child_seed(seed, i as u64);
                let traj = simulate_expert_with(&self.mdp, expert, self.mdp.horizon(), &mut stream_rng(s, 0));
                let omega = generate_observations(&traj, obs, &self.cfg.sampling(), noise, s)?.omega;
                Ok(Episode {
                    true_trajectory: traj,
                    omega,
                    seed: s,
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Penetration trials
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrialOutcome {
    Success,
    Spotted,
    Timeout,
}

impl fmt::Display for TrialOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialOutcome::Success => "success",
            TrialOutcome::Spotted => "spotted",
            TrialOutcome::Timeout => "timeout",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOptions {
    /// Largest predicted chance of being seen on the remaining path at
    /// which the learner sets off.
    pub risk: f64,
    pub epoch_budget: usize,
    /// Longest wait of the random attacker, epochs.
    pub max_wait: f64,
    pub patroller_present: bool,
    /// Inverse temperature of the real patroller's Boltzmann policy.
    pub patroller_beta: f64,
    /// Intensity noise of the learner's sensing during the trial.
    pub noise: f64,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self {
            risk: 0.05,
            epoch_budget: 200,
            max_wait: 50.0,
            patroller_present: true,
            patroller_beta: 5.0,
            noise: 0.1,
        }
    }
}

/// How the learner decides when to go.
#[derive(Clone, Copy, Debug)]
pub enum Attacker<'a> {
    /// Tracks the patroller with a belief filter driven by this policy and
    /// sets off when the predicted risk is low enough.
    Planned(&'a Policy),
    /// Waits a uniformly random time, then goes.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub outcome: TrialOutcome,
    /// Epochs elapsed when the trial ended.
    pub epochs: usize,
    /// Epoch at which the learner set off, if it did.
    pub departure: Option<usize>,
}

/// Which patroller states see each layout cell.
fn spotting_table(world: &World) -> Vec<Vec<bool>> {
    let cfg = &world.cfg;
    let n_cells = world.layout.width * world.layout.height;
    (0..world.mdp.n_states())
        .map(|s| {
            let from = world.state_cell(s);
            let h = world.state_heading(s);
            (0..n_cells)
                .map(|c| {
                    world.layout.is_open(c) && world.layout.sees(from, h, c, cfg.view_range, cfg.view_half_angle_deg)
                })
                .collect()
        })
        .collect()
}

/// Distribution over the patroller's next state given a pair belief.
fn predict_states(mdp: &Mdp, pair_belief: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mdp.n_states()];
    for (p, &w) in pair_belief.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for &(s2, pr) in mdp.pair_successors(p) {
            out[s2] += w * pr;
        }
    }
    out
}

/// Chance of being seen while walking `path` (first cell excluded) starting
/// now, with the patroller's state distributed as `states` and moving by
/// `policy`.
fn path_risk(world: &World, spot: &[Vec<bool>], policy: &Policy, states: &[f64], path: &[usize], goal: usize) -> f64 {
    let mdp = &world.mdp;
    let n_a = mdp.n_actions();
    let mut m = states.to_vec();
    let mut pairs = vec![0.0; mdp.n_pairs()];
    for &cell in path.iter().skip(1) {
        for (p, x) in pairs.iter_mut().enumerate() {
            *x = m[p / n_a] * policy.as_slice()[p];
        }
        m = predict_states(mdp, &pairs);
        if cell == goal {
            break;
        }
        for (s, x) in m.iter_mut().enumerate() {
            if spot[s][cell] {
                *x = 0.0;
            }
        }
    }
    (1.0 - m.iter().sum::<f64>()).max(0.0)
}

/// Runs one attempt to reach the goal unseen.
///
/// The real patroller starts on `P` and follows the Boltzmann policy of the
/// ground-truth reward. A planned attacker filters the patroller's pair from
/// `obs` observations under its learned policy and leaves its start cell once
/// the chance of being seen along the whole remaining shortest path drops
/// below `opts.risk`; a random attacker leaves after a uniform wait. Once
/// moving, the learner walks one cell per epoch. The learner is spotted when
/// it stands in the patroller's field of view (or the two swap cells).
pub fn penetration_trial(
    world: &World,
    attacker: Attacker<'_>,
    obs: &ObservationModel,
    opts: &TrialOptions,
    seed: u64,
) -> Result<TrialResult> {
    let layout = &world.layout;
    let goal = layout
        .goal
        .map(|(x, y)| layout.index(x, y))
        .ok_or_else(|| Error::Config("penetration trials need a goal".into()))?;
    let start = layout.index(layout.learner.0, layout.learner.1);
    let path = layout
        .shortest_path(start, goal)
        .ok_or_else(|| Error::Config("goal is unreachable from the learner".into()))?;
    if obs.n_pairs() != world.mdp.n_pairs() {
        return Err(Error::Dimension {
            what: "observation model",
            expected: world.mdp.n_pairs(),
            got: obs.n_pairs(),
        });
    }
    let mdp = &world.mdp;
    let n_a = mdp.n_actions();
    let spot = spotting_table(world);
    let patroller_policy = world.expert_policy(opts.patroller_beta)?;
    let sampling = world.cfg.sampling();

    let mut patrol_rng = stream_rng(seed, 0);
    let mut sensor_rngs = [stream_rng(seed, 1), stream_rng(seed, 2), stream_rng(seed, 3)];
    let wait = match attacker {
        Attacker::Random => crate::baselines::random_attack(opts.max_wait, child_seed(seed, 4))?.floor() as usize,
        Attacker::Planned(_) => 0,
    };
    if let Attacker::Planned(pi) = attacker {
        if pi.n_states() != mdp.n_states() || pi.n_actions() != n_a {
            return Err(Error::Dimension {
                what: "learned policy",
                expected: mdp.n_pairs(),
                got: pi.n_states() * pi.n_actions(),
            });
        }
    }

    let mut patroller = world.patroller_start();
    let mut progress = 0usize;
    let mut departure = None;
    let mut predicted = vec![1.0 / mdp.n_states() as f64; mdp.n_states()];
    let hidden = |progress: usize| progress == 0 && world.cfg.learner_hidden_at_start;

    if opts.patroller_present && !hidden(0) && spot[patroller][path[0]] {
        return Ok(TrialResult {
            outcome: TrialOutcome::Spotted,
            epochs: 0,
            departure,
        });
    }

    for epoch in 0..opts.epoch_budget {
        if departure.is_none() {
            let go = if !opts.patroller_present {
                match attacker {
                    Attacker::Planned(_) => true,
                    Attacker::Random => epoch >= wait,
                }
            } else {
                match attacker {
                    Attacker::Random => epoch >= wait,
                    Attacker::Planned(pi) => path_risk(world, &spot, pi, &predicted, &path, goal) < opts.risk,
                }
            };
            if go {
                departure = Some(epoch);
            }
        }

        let learner_from = path[progress];
        if departure.is_some() {
            progress += 1;
        }
        let learner_to = path[progress];

        if opts.patroller_present {
            let a = draw(patroller_policy.row(patroller).iter().copied(), &mut patrol_rng);
            let succ = mdp.successors(patroller, a);
            let next = succ[draw(succ.iter().map(|&(_, p)| p), &mut patrol_rng)].0;
            if let (Attacker::Planned(pi), None) = (attacker, departure) {
                let (o, _) = observe_pair(patroller, a, obs, &sampling, opts.noise, &mut sensor_rngs);
                let lik = obs.step_likelihoods(&o);
                let mut pairs: Vec<f64> = (0..mdp.n_pairs())
                    .map(|p| predicted[p / n_a] * pi.as_slice()[p] * lik[p])
                    .collect();
                let z: f64 = pairs.iter().sum();
                if z > 0.0 {
                    pairs.iter_mut().for_each(|x| *x /= z);
                } else {
                    pairs = (0..mdp.n_pairs())
                        .map(|p| predicted[p / n_a] * pi.as_slice()[p])
                        .collect();
                }
                predicted = predict_states(mdp, &pairs);
            }
            let from_cell = world.state_cell(patroller);
            patroller = next;
            if learner_to == goal {
                return Ok(TrialResult {
                    outcome: TrialOutcome::Success,
                    epochs: epoch + 1,
                    departure,
                });
            }
            let swapped = from_cell == learner_to && world.state_cell(patroller) == learner_from;
            if !hidden(progress) && (spot[patroller][learner_to] || swapped) {
                return Ok(TrialResult {
                    outcome: TrialOutcome::Spotted,
                    epochs: epoch + 1,
                    departure,
                });
            }
        } else if learner_to == goal {
            return Ok(TrialResult {
                outcome: TrialOutcome::Success,
                epochs: epoch + 1,
                departure,
            });
        }
    }
    Ok(TrialResult {
        outcome: TrialOutcome::Timeout,
        epochs: opts.epoch_budget,
        departure,
    })
}
