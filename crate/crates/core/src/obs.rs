//! Sound-intensity and vision observation model.
//!
//! A source of strength `k` moving at constant velocity `v` from `p0` is heard
//! at the listener with intensity `k / r(t)²`. Because `r(t)²` is quadratic in
//! `t`, the reciprocal intensity is a quadratic `a't² + b't + c'`; fitting that
//! quadratic to the samples of one decision epoch turns an irregular sample
//! stream into a three-number observation that also covers the unsampled part
//! of the epoch.
//!
//! Per-step likelihoods compare observed and predicted reciprocal curves on a
//! fixed grid and are normalized over all state-action pairs. The Gaussian
//! bandwidth of an epoch can be widened by the standard error of its fitted
//! curve, so an epoch heard from far away or through a short sample window
//! counts for less than a clean one. Vision readings,
//! when present, override sound with a sharply peaked discrete likelihood.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points on the reciprocal-intensity grid used by the curve distance.
pub const GRID_POINTS: usize = 16;

/// Smallest intensity kept after adding noise.
pub const INTENSITY_FLOOR: f64 = 1e-6;

/// Default probability that an in-view reading names the true pair.
pub const DEFAULT_VISION_ACCURACY: f64 = 0.95;

const SINGULAR_R2: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// A point or vector in the plane, meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm2().sqrt()
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

/// Constant-velocity motion during one epoch. Times are epoch-relative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSegment {
    /// Position at time `t0`.
    pub p0: Point,
    pub v: Point,
    pub t0: f64,
    /// Length of the epoch the segment covers, seconds.
    pub duration: f64,
}

impl MotionSegment {
    pub fn stationary(p: Point, duration: f64) -> Self {
        Self {
            p0: p,
            v: Point::default(),
            t0: 0.0,
            duration,
        }
    }

    pub fn position(&self, t: f64) -> Point {
        self.p0 + self.v.scale(t - self.t0)
    }

    /// Offset from the listener at epoch time 0.
    fn offset(&self, listener: Point) -> Point {
        self.p0 - self.v.scale(self.t0) - listener
    }

    /// Smallest squared distance to `listener` over `[0, duration]`.
    pub fn min_dist2(&self, listener: Point) -> f64 {
        let d = self.offset(listener);
        let vv = self.v.norm2();
        let t = if vv > 0.0 {
            (-self.v.dot(d) / vv).clamp(0.0, self.duration)
        } else {
            0.0
        };
        (d + self.v.scale(t)).norm2()
    }
}

/// Coefficients `(a', b', c')` of `1/I(t) = a't² + b't + c'`.
pub fn predicted_coeffs(seg: &MotionSegment, listener: Point, k: f64) -> Result<[f64; 3]> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Precondition(format!("source strength {k} must be positive")));
    }
    if seg.min_dist2(listener) <= SINGULAR_R2 {
        return Err(Error::Singular(format!(
            "path from ({}, {}) passes through the listener",
            seg.p0.x, seg.p0.y
        )));
    }
    let d = seg.offset(listener);
    Ok([seg.v.norm2() / k, 2.0 * seg.v.dot(d) / k, d.norm2() / k])
}

/// `k / r(t)²` at epoch time `t`.
pub fn intensity_at(seg: &MotionSegment, listener: Point, k: f64, t: f64) -> Result<f64> {
    let r2 = (seg.position(t) - listener).norm2();
    if r2 <= SINGULAR_R2 {
        return Err(Error::Singular(format!("source on the listener at t = {t}")));
    }
    Ok(k / r2)
}

// ---------------------------------------------------------------------------
// Epoch fitting
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensitySample {
    pub t: f64,
    pub intensity: f64,
}

/// Which model the fit fell back to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitRank {
    Full,
    Linear,
    Constant,
    Empty,
}

/// Fitted reciprocal-intensity quadratic for one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochObservation {
    pub coeffs: [f64; 3],
    pub fit_residual: f64,
    /// Standard error of the fitted curve, root-mean-square over the epoch
    /// grid. Grows with the noise and with extrapolation past the sampled
    /// window.
    pub curve_sd: f64,
    pub sample_count: usize,
    /// Samples dropped for non-positive or non-finite intensity.
    pub rejected: usize,
    pub rank: FitRank,
}

impl EpochObservation {
    pub fn eval(&self, t: f64) -> f64 {
        let [a, b, c] = self.coeffs;
        (a * t + b) * t + c
    }

    pub fn is_low_rank(&self) -> bool {
        self.rank != FitRank::Full
    }

    /// Observation carrying no information.
    pub fn empty() -> Self {
        Self {
            coeffs: [0.0; 3],
            fit_residual: 0.0,
            curve_sd: 0.0,
            sample_count: 0,
            rejected: 0,
            rank: FitRank::Empty,
        }
    }
}

fn quad_eval(c: &[f64; 3], t: f64) -> f64 {
    (c[0] * t + c[1]) * t + c[2]
}

/// Least squares of `y` on the given columns of `(t², t, 1)`.
fn lstsq(ts: &[f64], ys: &[f64], cols: &[usize]) -> Option<[f64; 3]> {
    let x = DMatrix::from_fn(ts.len(), cols.len(), |i, j| match cols[j] {
        0 => ts[i] * ts[i],
        1 => ts[i],
        _ => 1.0,
    });
    let y = DVector::from_column_slice(ys);
    let sol = x.svd(true, true).solve(&y, 1e-14).ok()?;
    let mut out = [0.0; 3];
    for (j, &c) in cols.iter().enumerate() {
        out[c] = sol[j];
    }
    Some(out)
}

/// Root-mean-square standard error over the grid of a least-squares curve
/// on the given columns, from the residual sum of squares `sse`.
fn curve_sd(ts: &[f64], cols: &[usize], sse: f64, duration: f64) -> f64 {
    let row = |t: f64| DVector::from_iterator(cols.len(), cols.iter().map(|&c| [t * t, t, 1.0][c]));
    let x = DMatrix::from_fn(ts.len(), cols.len(), |i, j| row(ts[i])[j]);
    let Ok(cov) = (x.transpose() * &x).pseudo_inverse(1e-12) else {
        return 0.0;
    };
    let dof = ts.len().saturating_sub(cols.len()).max(1);
    let s2 = sse / dof as f64;
    let grid = time_grid(duration);
    let leverage = grid.iter().map(|&t| {
        let r = row(t);
        (r.transpose() * &cov * &r)[0]
    });
    (s2 * leverage.sum::<f64>() / GRID_POINTS as f64).sqrt()
}

fn positive_on(c: &[f64; 3], duration: f64) -> bool {
    let mut ends = vec![0.0, duration];
    if c[0] > 0.0 {
        let t = -c[1] / (2.0 * c[0]);
        if t > 0.0 && t < duration {
            ends.push(t);
        }
    }
    ends.into_iter().all(|t| quad_eval(c, t) > 0.0)
}

/// Fits `1/I = a't² + b't + c'` to one epoch's samples.
///
/// Non-positive intensities are dropped. With fewer than three distinct
/// times the fit falls back to a line or a constant. A negative curvature is
/// refitted as a line, and a curve that is not positive across
/// `[0, duration]` is replaced by the mean reciprocal intensity.
pub fn fit_epoch(samples: &[IntensitySample], duration: f64) -> EpochObservation {
    let (kept, rejected): (Vec<&IntensitySample>, Vec<&IntensitySample>) = samples
        .iter()
        .partition(|s| s.intensity > 0.0 && s.intensity.is_finite() && s.t.is_finite());
    let ts: Vec<f64> = kept.iter().map(|s| s.t).collect();
    let ys: Vec<f64> = kept.iter().map(|s| 1.0 / s.intensity).collect();
    if ts.is_empty() {
        return EpochObservation {
            rejected: rejected.len(),
            ..EpochObservation::empty()
        };
    }

    let mut distinct = ts.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let constant = || [0.0, 0.0, ys.iter().sum::<f64>() / ys.len() as f64];
    let (mut coeffs, mut rank) = match distinct.len() {
        1 => (constant(), FitRank::Constant),
        2 => (lstsq(&ts, &ys, &[1, 2]).unwrap_or_else(constant), FitRank::Linear),
        _ => match lstsq(&ts, &ys, &[0, 1, 2]) {
            Some(c) => (c, FitRank::Full),
            None => (constant(), FitRank::Constant),
        },
    };
    if coeffs[0] < 0.0 {
        coeffs = lstsq(&ts, &ys, &[1, 2]).unwrap_or_else(constant);
        rank = FitRank::Linear;
    }
    if !positive_on(&coeffs, duration) {
        coeffs = constant();
        rank = FitRank::Constant;
    }
    let sse: f64 = ts
        .iter()
        .zip(&ys)
        .map(|(&t, &y)| (y - quad_eval(&coeffs, t)).powi(2))
        .sum();
    let cols: &[usize] = match rank {
        FitRank::Full => &[0, 1, 2],
        FitRank::Linear => &[1, 2],
        _ => &[2],
    };
    EpochObservation {
        coeffs,
        fit_residual: (sse / ts.len() as f64).sqrt(),
        curve_sd: curve_sd(&ts, cols, sse, duration),
        sample_count: ts.len(),
        rejected: rejected.len(),
        rank,
    }
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma` to every
/// intensity and clamps at [`INTENSITY_FLOOR`]. A normal draw is consumed
/// for every sample even when `sigma` is zero, so streams stay aligned
/// across noise levels.
pub fn add_noise_with<R: Rng + ?Sized>(samples: &[IntensitySample], sigma: f64, rng: &mut R) -> Vec<IntensitySample> {
    samples
        .iter()
        .map(|s| {
            let z: f64 = rng.sample(StandardNormal);
            let intensity = if sigma > 0.0 {
                (s.intensity + sigma * z).max(INTENSITY_FLOOR)
            } else {
                s.intensity
            };
            IntensitySample { t: s.t, intensity }
        })
        .collect()
}

pub fn add_noise(samples: &[IntensitySample], sigma: f64, seed: u64) -> Result<Vec<IntensitySample>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Precondition(format!("noise level {sigma} must be nonnegative")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(add_noise_with(samples, sigma, &mut rng))
}

// ---------------------------------------------------------------------------
// Observation sequences
// ---------------------------------------------------------------------------

/// A range-finder sighting of the expert, reported as a state-action pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisionReading {
    pub state: usize,
    pub action: usize,
}

/// Everything the learner records in one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepObservation {
    pub sound: EpochObservation,
    pub vision: Option<VisionReading>,
}

/// One observation per decision epoch, `L + 1` in total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSequence {
    pub epochs: Vec<StepObservation>,
}

impl ObservationSequence {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// `epoch_index,a,b,c,residual,sample_count` rows.
    pub fn to_csv_rows(&self) -> Vec<String> {
        self.epochs
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let [a, b, c] = e.sound.coeffs;
                format!(
                    "{i},{a:e},{b:e},{c:e},{:e},{}",
                    e.sound.fit_residual, e.sound.sample_count
                )
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Likelihood model
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservationKind {
    SoundOnly,
    VisionOnly,
    Fused,
}

/// Per-pair geometry the model needs: where the expert is and how it moves
/// during the epoch when taking each action.
#[derive(Clone, Debug)]
pub struct PairGeometry {
    pub n_actions: usize,
    /// One segment per state-action pair.
    pub segments: Vec<MotionSegment>,
    /// Position of each state.
    pub positions: Vec<Point>,
    /// Pairs whose state lies within this distance count as vision neighbors.
    pub neighbor_radius: f64,
}

/// Maps an epoch's observation to a likelihood vector over state-action
/// pairs.
#[derive(Clone, Debug)]
pub struct ObservationModel {
    kind: ObservationKind,
    listener: Point,
    sigma: f64,
    curve_weight: f64,
    source_strength: f64,
    epoch_duration: f64,
    n_actions: usize,
    /// Predicted reciprocal curve on the grid; `None` for singular pairs.
    predicted: Vec<Option<[f64; GRID_POINTS]>>,
    coeffs: Vec<Option<[f64; 3]>>,
    view_region: Vec<bool>,
    vision_accuracy: f64,
    neighbors: Vec<Vec<usize>>,
    geometry: PairGeometry,
}

impl ObservationModel {
    pub fn new(
        kind: ObservationKind,
        listener: Point,
        sigma: f64,
        source_strength: f64,
        geometry: &PairGeometry,
        view_region: Vec<bool>,
    ) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("likelihood bandwidth {sigma} must be positive")));
        }
        if !(source_strength > 0.0) {
            return Err(Error::Config(format!(
                "source strength {source_strength} must be positive"
            )));
        }
        let n_s = geometry.positions.len();
        let n_a = geometry.n_actions;
        if geometry.segments.len() != n_s * n_a {
            return Err(Error::Dimension {
                what: "pair geometry",
                expected: n_s * n_a,
                got: geometry.segments.len(),
            });
        }
        if view_region.len() != n_s {
            return Err(Error::Dimension {
                what: "view region",
                expected: n_s,
                got: view_region.len(),
            });
        }
        let epoch_duration = geometry.segments.first().map_or(1.0, |s| s.duration);
        let grid = time_grid(epoch_duration);
        let coeffs: Vec<Option<[f64; 3]>> = geometry
            .segments
            .iter()
            .map(|seg| predicted_coeffs(seg, listener, source_strength).ok())
            .collect();
        let predicted = coeffs
            .iter()
            .map(|c| c.map(|c| std::array::from_fn(|j| quad_eval(&c, grid[j]))))
            .collect();
        let n_p = n_s * n_a;
        let neighbors = (0..n_p)
            .map(|p| {
                let here = geometry.positions[p / n_a];
                (0..n_p)
                    .filter(|&q| q != p && geometry.positions[q / n_a].dist(here) <= geometry.neighbor_radius)
                    .collect()
            })
            .collect();
        Ok(Self {
            kind,
            listener,
            sigma,
            curve_weight: 0.0,
            source_strength,
            epoch_duration,
            n_actions: n_a,
            predicted,
            coeffs,
            view_region,
            vision_accuracy: DEFAULT_VISION_ACCURACY,
            neighbors,
            geometry: geometry.clone(),
        })
    }

    pub fn with_vision_accuracy(mut self, accuracy: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::Config(format!("vision accuracy {accuracy} outside [0, 1]")));
        }
        self.vision_accuracy = accuracy;
        Ok(self)
    }

    /// Widens each epoch's bandwidth by `weight` times its fitted curve's
    /// standard error: `σ_o = sqrt(σ² + (weight · curve_sd)²)`.
    pub fn with_curve_weight(mut self, weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::Config(format!("curve weight {weight} must be nonnegative")));
        }
        self.curve_weight = weight;
        Ok(self)
    }

    pub fn with_kind(mut self, kind: ObservationKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_view_region(mut self, view_region: Vec<bool>) -> Result<Self> {
        if view_region.len() != self.view_region.len() {
            return Err(Error::Dimension {
                what: "view region",
                expected: self.view_region.len(),
                got: view_region.len(),
            });
        }
        self.view_region = view_region;
        Ok(self)
    }

    pub fn kind(&self) -> ObservationKind {
        self.kind
    }

    pub fn listener(&self) -> Point {
        self.listener
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn curve_weight(&self) -> f64 {
        self.curve_weight
    }

    /// Bandwidth applied to the epoch `o`.
    pub fn epoch_sigma(&self, o: &EpochObservation) -> f64 {
        self.sigma.hypot(self.curve_weight * o.curve_sd)
    }

    pub fn source_strength(&self) -> f64 {
        self.source_strength
    }

    pub fn epoch_duration(&self) -> f64 {
        self.epoch_duration
    }

    pub fn n_pairs(&self) -> usize {
        self.predicted.len()
    }

    pub fn view_region(&self) -> &[bool] {
        &self.view_region
    }

    pub fn in_view(&self, state: usize) -> bool {
        self.view_region[state]
    }

    pub fn vision_accuracy(&self) -> f64 {
        self.vision_accuracy
    }

    /// Predicted coefficients of a pair, `None` when its path is singular.
    pub fn pair_coeffs(&self, pair: usize) -> Option<[f64; 3]> {
        self.coeffs[pair]
    }

    pub fn geometry(&self) -> &PairGeometry {
        &self.geometry
    }

    pub fn neighbors(&self, pair: usize) -> &[usize] {
        &self.neighbors[pair]
    }

    /// Normalized sound likelihood over all pairs. Every pair is compared at
    /// the same epoch bandwidth, so the ranking of pairs does not depend on
    /// the curve weight.
    pub fn sound_likelihoods(&self, o: &EpochObservation) -> Vec<f64> {
        let n = self.n_pairs();
        if o.sample_count == 0 {
            return vec![1.0 / n as f64; n];
        }
        let grid = time_grid(self.epoch_duration);
        let observed: [f64; GRID_POINTS] = std::array::from_fn(|j| o.eval(grid[j]));
        let sigma = self.epoch_sigma(o);
        let scale = 1.0 / (2.0 * sigma * sigma);
        let mut logs: Vec<f64> = self
            .predicted
            .iter()
            .map(|pred| match pred {
                Some(q) => {
                    let d2 = q.iter().zip(&observed).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / GRID_POINTS as f64;
                    -d2 * scale
                }
                None => f64::NEG_INFINITY,
            })
            .collect();
        if crate::logspace::normalize_log(&mut logs) == f64::NEG_INFINITY {
            return vec![1.0 / n as f64; n];
        }
        logs
    }

    pub fn sound_likelihood(&self, o: &EpochObservation, s: usize, a: usize) -> f64 {
        self.sound_likelihoods(o)[s * self.n_actions + a]
    }

    /// Normalized vision likelihood over all pairs. Without a reading every
    /// pair is equally likely.
    pub fn vision_likelihoods(&self, reading: Option<&VisionReading>) -> Vec<f64> {
        let n = self.n_pairs();
        let Some(r) = reading else {
            return vec![1.0 / n as f64; n];
        };
        let observed = r.state * self.n_actions + r.action;
        let mut out = vec![0.0; n];
        out[observed] = self.vision_accuracy;
        // Pr(reading | p) for every p that could have produced it as a
        // neighbor confusion.
        for p in 0..n {
            let nb = &self.neighbors[p];
            if !nb.is_empty() && nb.binary_search(&observed).is_ok() {
                out[p] += (1.0 - self.vision_accuracy) / nb.len() as f64;
            }
        }
        let z: f64 = out.iter().sum();
        if z > 0.0 {
            out.iter_mut().for_each(|x| *x /= z);
            out
        } else {
            vec![1.0 / n as f64; n]
        }
    }

    pub fn vision_likelihood(&self, reading: Option<&VisionReading>, s: usize, a: usize) -> f64 {
        self.vision_likelihoods(reading)[s * self.n_actions + a]
    }

    /// Likelihood vector for one epoch under this model's kind.
    pub fn step_likelihoods(&self, o: &StepObservation) -> Vec<f64> {
        match self.kind {
            ObservationKind::SoundOnly => self.sound_likelihoods(&o.sound),
            ObservationKind::VisionOnly => self.vision_likelihoods(o.vision.as_ref()),
            ObservationKind::Fused => match &o.vision {
                Some(r) => self.vision_likelihoods(Some(r)),
                None => self.sound_likelihoods(&o.sound),
            },
        }
    }

    pub fn fused_likelihood(&self, o: &StepObservation, s: usize, a: usize) -> f64 {
        self.step_likelihoods(o)[s * self.n_actions + a]
    }

    /// A reading for the true pair: correct with the configured accuracy,
    /// otherwise a uniformly chosen neighbor.
    pub fn sample_reading<R: Rng + ?Sized>(&self, state: usize, action: usize, rng: &mut R) -> VisionReading {
        let p = state * self.n_actions + action;
        let u: f64 = rng.random();
        let nb = &self.neighbors[p];
        let q = if u < self.vision_accuracy || nb.is_empty() {
            p
        } else {
            nb[rng.random_range(0..nb.len())]
        };
        VisionReading {
            state: q / self.n_actions,
            action: q % self.n_actions,
        }
    }
}

fn time_grid(duration: f64) -> [f64; GRID_POINTS] {
    std::array::from_fn(|j| duration * j as f64 / (GRID_POINTS - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn moving() -> MotionSegment {
        MotionSegment {
            p0: Point::new(3.0, 0.0),
            v: Point::new(1.0, 0.0),
            t0: 0.0,
            duration: 1.0,
        }
    }

    fn samples_from(c: [f64; 3], ts: &[f64]) -> Vec<IntensitySample> {
        ts.iter()
            .map(|&t| IntensitySample {
                t,
                intensity: 1.0 / quad_eval(&c, t),
            })
            .collect()
    }

    #[test]
    fn predicted_coeffs_examples() {
        let origin = Point::default();
        let still = MotionSegment::stationary(Point::new(0.0, 2.0), 1.0);
        assert_eq!(predicted_coeffs(&still, origin, 1.0).unwrap(), [0.0, 0.0, 4.0]);
        assert_eq!(intensity_at(&still, origin, 1.0, 0.3).unwrap(), 0.25);

        assert_eq!(predicted_coeffs(&moving(), origin, 1.0).unwrap(), [1.0, 6.0, 9.0]);
        let back = MotionSegment {
            v: Point::new(-1.0, 0.0),
            ..moving()
        };
        assert_eq!(predicted_coeffs(&back, origin, 1.0).unwrap()[1], -6.0);
        assert!((intensity_at(&moving(), origin, 1.0, 1.0).unwrap() - 1.0 / 16.0).abs() < 1e-15);

        let unit = MotionSegment::stationary(Point::new(1.0, 0.0), 1.0);
        assert_eq!(intensity_at(&unit, origin, 7.0, 0.0).unwrap(), 7.0);
    }

    #[test]
    fn singular_paths_are_rejected() {
        let through = MotionSegment {
            p0: Point::new(-0.5, 0.0),
            v: Point::new(1.0, 0.0),
            t0: 0.0,
            duration: 1.0,
        };
        assert!(matches!(
            predicted_coeffs(&through, Point::default(), 1.0),
            Err(Error::Singular(_))
        ));
        assert!(intensity_at(&through, Point::default(), 1.0, 0.5).is_err());
        assert!(predicted_coeffs(&moving(), Point::default(), 0.0).is_err());
    }

    #[test]
    fn fit_recovers_coefficients() {
        let fit = fit_epoch(&samples_from([1.0, 6.0, 9.0], &[0.0, 0.5, 1.0]), 1.0);
        assert_eq!(fit.rank, FitRank::Full);
        for (a, b) in fit.coeffs.iter().zip([1.0, 6.0, 9.0]) {
            assert!((a - b).abs() < 1e-9, "{:?}", fit.coeffs);
        }
        assert!(fit.fit_residual < 1e-9);

        let flat: Vec<_> = (0..10)
            .map(|i| IntensitySample {
                t: i as f64 * 0.1,
                intensity: 0.25,
            })
            .collect();
        let fit = fit_epoch(&flat, 1.0);
        for (a, b) in fit.coeffs.iter().zip([0.0, 0.0, 4.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn low_rank_fallbacks() {
        let two = fit_epoch(&samples_from([1.0, 6.0, 9.0], &[0.0, 1.0]), 1.0);
        assert_eq!(two.rank, FitRank::Linear);
        assert!(two.is_low_rank());
        assert_eq!(two.coeffs[0], 0.0);

        let one = fit_epoch(&samples_from([0.0, 0.0, 4.0], &[0.2, 0.2]), 1.0);
        assert_eq!(one.rank, FitRank::Constant);

        let bad = vec![
            IntensitySample { t: 0.0, intensity: 0.0 },
            IntensitySample {
                t: 0.1,
                intensity: -1.0,
            },
        ];
        let fit = fit_epoch(&bad, 1.0);
        assert_eq!(fit.rank, FitRank::Empty);
        assert_eq!(fit.rejected, 2);
        assert_eq!(fit.sample_count, 0);
    }

    #[test]
    fn concave_fit_is_refitted() {
        let fit = fit_epoch(&samples_from([-1.0, 1.0, 4.0], &[0.0, 0.25, 0.5, 0.75, 1.0]), 1.0);
        assert!(fit.coeffs[0] >= 0.0);
        assert_eq!(fit.rank, FitRank::Linear);
        assert!(positive_on(&fit.coeffs, 1.0));
    }

    #[test]
    fn noise_properties() {
        let s: Vec<_> = (0..5)
            .map(|i| IntensitySample {
                t: i as f64 * 0.2,
                intensity: 1.0,
            })
            .collect();
        assert_eq!(add_noise(&s, 0.0, 1).unwrap(), s);
        assert_eq!(add_noise(&s, 0.1, 9).unwrap(), add_noise(&s, 0.1, 9).unwrap());
        assert!(add_noise(&s, -0.1, 9).is_err());
        let heavy = add_noise(&s, 100.0, 3).unwrap();
        assert!(heavy.iter().all(|x| x.intensity >= INTENSITY_FLOOR));

        let one = vec![IntensitySample { t: 0.0, intensity: 1.0 }; 100_000];
        let noisy = add_noise(&one, 0.1, 42).unwrap();
        let mean = noisy.iter().map(|x| x.intensity).sum::<f64>() / noisy.len() as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    fn line_geometry() -> PairGeometry {
        // Two stationary states mirrored about the listener at the origin.
        PairGeometry {
            n_actions: 2,
            segments: vec![
                MotionSegment::stationary(Point::new(-2.0, 0.0), 1.0),
                MotionSegment {
                    p0: Point::new(-2.0, 0.0),
                    v: Point::new(0.0, 1.0),
                    t0: 0.0,
                    duration: 1.0,
                },
                MotionSegment::stationary(Point::new(2.0, 0.0), 1.0),
                MotionSegment {
                    p0: Point::new(2.0, 0.0),
                    v: Point::new(0.0, 1.0),
                    t0: 0.0,
                    duration: 1.0,
                },
            ],
            positions: vec![Point::new(-2.0, 0.0), Point::new(2.0, 0.0)],
            neighbor_radius: 1.0,
        }
    }

    fn observe(seg: &MotionSegment) -> EpochObservation {
        let ts: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let samples: Vec<_> = ts
            .iter()
            .map(|&t| IntensitySample {
                t,
                intensity: intensity_at(seg, Point::default(), 1.0, t).unwrap(),
            })
            .collect();
        fit_epoch(&samples, 1.0)
    }

    #[test]
    fn sound_likelihood_properties() {
        let g = line_geometry();
        let m = ObservationModel::new(
            ObservationKind::SoundOnly,
            Point::default(),
            0.05,
            1.0,
            &g,
            vec![false; 2],
        )
        .unwrap();
        let o = observe(&g.segments[1]);
        let l = m.sound_likelihoods(&o);
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Mirror images are indistinguishable; the truth is a maximizer.
        assert!((l[1] - l[3]).abs() < 1e-12);
        let best = l.iter().copied().fold(0.0, f64::max);
        assert_eq!(l[1], best);
        assert!(l[0] < l[1]);

        let flat = ObservationModel::new(
            ObservationKind::SoundOnly,
            Point::default(),
            1e6,
            1.0,
            &g,
            vec![false; 2],
        )
        .unwrap();
        for x in flat.sound_likelihoods(&o) {
            assert!((x - 0.25).abs() < 1e-6);
        }
        assert_eq!(m.sound_likelihoods(&EpochObservation::empty()), vec![0.25; 4]);
    }

    #[test]
    fn vision_and_fusion() {
        let g = PairGeometry {
            neighbor_radius: 5.0,
            ..line_geometry()
        };
        let sound = ObservationModel::new(
            ObservationKind::SoundOnly,
            Point::default(),
            0.05,
            1.0,
            &g,
            vec![true, false],
        )
        .unwrap();
        let vision = sound.clone().with_kind(ObservationKind::VisionOnly);
        let fused = sound.clone().with_kind(ObservationKind::Fused);
        let reading = VisionReading { state: 0, action: 1 };
        let lv = vision.vision_likelihoods(Some(&reading));
        let top = lv.iter().copied().fold(0.0, f64::max);
        assert_eq!(lv[1], top);
        assert!((lv.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(vision.vision_likelihoods(None), vec![0.25; 4]);

        let o = observe(&g.segments[2]);
        let occluded = StepObservation { sound: o, vision: None };
        assert_eq!(fused.step_likelihoods(&occluded), sound.sound_likelihoods(&o));
        assert_eq!(vision.step_likelihoods(&occluded), vec![0.25; 4]);
        let seen = StepObservation {
            sound: o,
            vision: Some(reading),
        };
        assert_eq!(fused.step_likelihoods(&seen), lv);
        assert_eq!(sound.step_likelihoods(&seen), sound.sound_likelihoods(&o));
    }

    #[test]
    fn perfect_vision_is_a_delta() {
        let g = line_geometry();
        let m = ObservationModel::new(
            ObservationKind::VisionOnly,
            Point::default(),
            1.0,
            1.0,
            &g,
            vec![true; 2],
        )
        .unwrap()
        .with_vision_accuracy(1.0)
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = m.sample_reading(1, 0, &mut rng);
        assert_eq!(r, VisionReading { state: 1, action: 0 });
        assert_eq!(m.vision_likelihoods(Some(&r)), vec![0.0, 0.0, 1.0, 0.0]);
    }

    fn point() -> impl Strategy<Value = Point> {
        (-10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y)| Point::new(x, y))
    }

    proptest! {
        #[test]
        fn reciprocal_intensity_is_quadratic(p0 in point(), v in point(), t0 in 0.0..1.0f64, k in 0.1..50.0f64) {
            let seg = MotionSegment { p0, v, t0, duration: 1.0 };
            let listener = Point::new(0.0, 20.0);
            let c = predicted_coeffs(&seg, listener, k).unwrap();
            for i in 0..100 {
                let t = i as f64 / 100.0;
                let direct = intensity_at(&seg, listener, k, t).unwrap();
                let via = 1.0 / quad_eval(&c, t);
                prop_assert!((direct - via).abs() <= 1e-10 * direct.max(1.0));
            }
        }

        #[test]
        fn noiseless_fit_round_trips(p0 in point(), v in point(), n in 3usize..30) {
            let seg = MotionSegment { p0, v, t0: 0.0, duration: 1.0 };
            let listener = Point::new(0.0, 20.0);
            let c = predicted_coeffs(&seg, listener, 1.0).unwrap();
            let ts: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
            let fit = fit_epoch(&samples_from(c, &ts), 1.0);
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            let err = c.iter().zip(fit.coeffs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-8 * norm);
        }
    }
}
