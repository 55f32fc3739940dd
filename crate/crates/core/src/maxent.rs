//! Maximum-entropy IRL over finite-horizon trajectories.
//!
//! The maximum-entropy distribution matching a feature expectation `φ̂` is
//! the exponential family `Pr(T) = exp(θ · f(T)) / n(θ)`, where `f(T)` sums
//! the binary features along `T`. The weights solve the convex dual
//! `log n(θ) − θ · φ̂`, whose gradient is the model feature expectation minus
//! `φ̂`.
//!
//! The trajectory support is the set of dynamics-feasible trajectories: the
//! first state has positive start probability and every transition has
//! positive probability. Each feasible trajectory is weighted only by its
//! features, so at `θ = 0` the distribution is uniform over the support.
//!
//! Two routes compute the model expectation:
//! * [`ExpectationMethod::Enumerate`] sums over every feasible trajectory;
//! * [`ExpectationMethod::VisitationFrequency`] runs a forward-backward
//!   recursion over the horizon and sums pair marginals.
//!
//! Both work in the log domain (the forward pass keeps per-epoch
//! normalizers and accumulates their logarithms).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::log_sum_exp;
use crate::mdp::{FeatureSet, Mdp, RewardWeights};

/// Largest `(|S| |A|)^(L+1)` for which enumeration is attempted.
pub const DEFAULT_ENUMERATION_CAP: f64 = 1e6;

// ---------------------------------------------------------------------------
// Trajectories and feature counts
// ---------------------------------------------------------------------------

/// State-action pairs for epochs `0..=L`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn new(steps: Vec<(usize, usize)>) -> Self {
        Self { steps }
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks the length convention and index ranges against `mdp`.
    pub fn validate(&self, mdp: &Mdp) -> Result<()> {
        if self.steps.len() != mdp.horizon() + 1 {
            return Err(Error::Dimension {
                what: "trajectory length",
                expected: mdp.horizon() + 1,
                got: self.steps.len(),
            });
        }
        for &(s, a) in &self.steps {
            if s >= mdp.n_states() || a >= mdp.n_actions() {
                return Err(Error::Validation(format!("step ({s}, {a}) out of range")));
            }
        }
        Ok(())
    }

    /// True when every step has positive probability under the dynamics.
    pub fn is_feasible(&self, mdp: &Mdp) -> bool {
        let Some(&(s0, _)) = self.steps.first() else {
            return false;
        };
        mdp.start()[s0] > 0.0
            && self
                .steps
                .windows(2)
                .all(|w| mdp.transition_prob(w[0].0, w[0].1, w[1].0) > 0.0)
    }
}

/// `Σ_{(s,a) ∈ T} φ(s, a)`.
pub fn feature_count(traj: &Trajectory, feats: &FeatureSet) -> Vec<f64> {
    let mut out = vec![0.0; feats.k()];
    for &(s, a) in traj.steps() {
        for (o, f) in out.iter_mut().zip(feats.evaluate(s, a)) {
            *o += f;
        }
    }
    out
}

/// Expected per-trajectory feature counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureExpectation(pub Vec<f64>);

impl FeatureExpectation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Sup-norm distance to another expectation.
    pub fn max_abs_diff(&self, other: &FeatureExpectation) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Mean feature count over a multiset of demonstrations.
pub fn empirical_feature_expectation(demos: &[Trajectory], feats: &FeatureSet) -> Result<FeatureExpectation> {
    if demos.is_empty() {
        return Err(Error::Precondition(
            "empirical feature expectation needs at least one demonstration".into(),
        ));
    }
    let mut acc = vec![0.0; feats.k()];
    for t in demos {
        for (a, c) in acc.iter_mut().zip(feature_count(t, feats)) {
            *a += c;
        }
    }
    let n = demos.len() as f64;
    Ok(FeatureExpectation(acc.into_iter().map(|x| x / n).collect()))
}

// ---------------------------------------------------------------------------
// Enumeration
// ---------------------------------------------------------------------------

fn check_cap(mdp: &Mdp, cap: f64, hint: &'static str) -> Result<()> {
    let size = mdp.joint_assignment_count();
    if size > cap {
        return Err(Error::Capacity { size, cap, hint });
    }
    Ok(())
}

/// Every dynamics-feasible trajectory of length `L + 1`, in lexicographic
/// order of `(s, a)` steps.
pub fn feasible_trajectories(mdp: &Mdp, cap: f64) -> Result<Vec<Trajectory>> {
    check_cap(mdp, cap, "the visitation-frequency method")?;
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(mdp.horizon() + 1);
    for s in (0..mdp.n_states()).filter(|&s| mdp.start()[s] > 0.0) {
        extend_from(mdp, s, &mut current, &mut out);
    }
    Ok(out)
}

fn extend_from(mdp: &Mdp, s: usize, current: &mut Vec<(usize, usize)>, out: &mut Vec<Trajectory>) {
    for a in 0..mdp.n_actions() {
        current.push((s, a));
        if current.len() == mdp.horizon() + 1 {
            out.push(Trajectory::new(current.clone()));
        } else {
            for &(next, _) in mdp.successors(s, a) {
                extend_from(mdp, next, current, out);
            }
        }
        current.pop();
    }
}

/// `exp(θ · f(T)) / n(θ)` given `log n(θ)`.
pub fn trajectory_prob(traj: &Trajectory, theta: &RewardWeights, feats: &FeatureSet, log_partition: f64) -> f64 {
    (theta.dot(&feature_count(traj, feats)) - log_partition).exp()
}

// ---------------------------------------------------------------------------
// Model expectation
// ---------------------------------------------------------------------------

/// How the model feature expectation is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpectationMethod {
    Enumerate,
    #[default]
    VisitationFrequency,
}

/// `log n(θ)` together with the model feature expectation.
#[derive(Clone, Debug)]
pub struct ModelMoments {
    pub log_partition: f64,
    pub expectation: FeatureExpectation,
}

fn check_theta(theta: &RewardWeights, feats: &FeatureSet) -> Result<()> {
    if theta.len() != feats.k() {
        return Err(Error::Dimension {
            what: "reward weights",
            expected: feats.k(),
            got: theta.len(),
        });
    }
    Ok(())
}

/// Log partition and feature expectation of the maximum-entropy
/// distribution at `θ`.
pub fn model_moments(
    mdp: &Mdp,
    theta: &RewardWeights,
    feats: &FeatureSet,
    method: ExpectationMethod,
    cap: f64,
) -> Result<ModelMoments> {
    check_theta(theta, feats)?;
    match method {
        ExpectationMethod::Enumerate => enumerate_moments(mdp, theta, feats, cap),
        ExpectationMethod::VisitationFrequency => Ok(visitation_moments(mdp, theta, feats)),
    }
}

pub fn log_partition(mdp: &Mdp, theta: &RewardWeights, feats: &FeatureSet) -> Result<f64> {
    check_theta(theta, feats)?;
    Ok(visitation_moments(mdp, theta, feats).log_partition)
}

/// Expected feature counts under `Pr(T) ∝ exp(θ · f(T))`.
pub fn model_feature_expectation(
    mdp: &Mdp,
    theta: &RewardWeights,
    feats: &FeatureSet,
    method: ExpectationMethod,
) -> Result<FeatureExpectation> {
    Ok(model_moments(mdp, theta, feats, method, DEFAULT_ENUMERATION_CAP)?.expectation)
}

fn enumerate_moments(mdp: &Mdp, theta: &RewardWeights, feats: &FeatureSet, cap: f64) -> Result<ModelMoments> {
    let trajs = feasible_trajectories(mdp, cap)?;
    let counts: Vec<Vec<f64>> = trajs.iter().map(|t| feature_count(t, feats)).collect();
    let scores: Vec<f64> = counts.iter().map(|c| theta.dot(c)).collect();
    let log_z = log_sum_exp(&scores);
    let mut exp = vec![0.0; feats.k()];
    for (c, s) in counts.iter().zip(&scores) {
        let p = (s - log_z).exp();
        for (e, x) in exp.iter_mut().zip(c) {
            *e += p * x;
        }
    }
    Ok(ModelMoments {
        log_partition: log_z,
        expectation: FeatureExpectation(exp),
    })
}

/// Forward-backward over the feasible-trajectory lattice.
///
/// `alpha[t][s]` is the (normalized) total weight of prefixes ending in
/// `s` at epoch `t`; `beta[t][p]` the (normalized) weight of suffixes
/// continuing from pair `p` at epoch `t`. Pair marginals are their product.
fn visitation_moments(mdp: &Mdp, theta: &RewardWeights, feats: &FeatureSet) -> ModelMoments {
    let n_s = mdp.n_states();
    let n_a = mdp.n_actions();
    let n_p = mdp.n_pairs();
    let horizon = mdp.horizon();

    let scores: Vec<f64> = (0..n_p).map(|p| theta.dot(feats.pair_features(p))).collect();
    let shift = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (s - shift).exp()).collect();

    let mut alpha = vec![vec![0.0; n_s]; horizon + 1];
    let mut log_scale = 0.0;
    for (s, a0) in alpha[0].iter_mut().enumerate() {
        if mdp.start()[s] > 0.0 {
            *a0 = 1.0;
        }
    }
    log_scale += normalize(&mut alpha[0]).ln();
    for t in 0..horizon {
        let (head, tail) = alpha.split_at_mut(t + 1);
        let cur = &head[t];
        let next = &mut tail[0];
        for p in 0..n_p {
            let x = cur[p / n_a] * w[p];
            if x == 0.0 {
                continue;
            }
            for &(s2, _) in mdp.pair_successors(p) {
                next[s2] += x;
            }
        }
        log_scale += normalize(next).ln();
    }
    let last: f64 = (0..n_p).map(|p| alpha[horizon][p / n_a] * w[p]).sum();
    let log_partition = log_scale + last.ln() + shift * (horizon as f64 + 1.0);

    let mut beta = vec![1.0; n_p];
    let mut expectation = vec![0.0; feats.k()];
    let mut mu = vec![0.0; n_p];
    let mut gamma = vec![0.0; n_s];
    for t in (0..=horizon).rev() {
        if t < horizon {
            for (s2, g) in gamma.iter_mut().enumerate() {
                *g = (0..n_a).map(|a| w[s2 * n_a + a] * beta[s2 * n_a + a]).sum();
            }
            normalize(&mut gamma);
            for (p, b) in beta.iter_mut().enumerate() {
                *b = mdp.pair_successors(p).iter().map(|&(s2, _)| gamma[s2]).sum();
            }
        }
        for p in 0..n_p {
            mu[p] = alpha[t][p / n_a] * w[p] * beta[p];
        }
        normalize(&mut mu);
        for (p, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (e, f) in expectation.iter_mut().zip(feats.pair_features(p)) {
                *e += m * f;
            }
        }
    }

    ModelMoments {
        log_partition,
        expectation: FeatureExpectation(expectation),
    }
}

fn normalize(xs: &mut [f64]) -> f64 {
    let z: f64 = xs.iter().sum();
    if z > 0.0 {
        for x in xs.iter_mut() {
            *x /= z;
        }
    }
    z
}

// ---------------------------------------------------------------------------
// Dual and solver
// ---------------------------------------------------------------------------

/// Dual objective `log n(θ) − θ · φ̂` and its gradient.
#[derive(Clone, Debug)]
pub struct DualEvaluation {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub expectation: FeatureExpectation,
}

pub fn dual(
    mdp: &Mdp,
    feats: &FeatureSet,
    theta: &RewardWeights,
    phi_hat: &FeatureExpectation,
    method: ExpectationMethod,
) -> Result<DualEvaluation> {
    if phi_hat.0.len() != feats.k() {
        return Err(Error::Dimension {
            what: "target feature expectation",
            expected: feats.k(),
            got: phi_hat.0.len(),
        });
    }
    let m = model_moments(mdp, theta, feats, method, DEFAULT_ENUMERATION_CAP)?;
    let gradient = m.expectation.0.iter().zip(&phi_hat.0).map(|(e, h)| e - h).collect();
    Ok(DualEvaluation {
        value: m.log_partition - theta.dot(&phi_hat.0),
        gradient,
        expectation: m.expectation,
    })
}

/// Model expectation at `θ` minus the target.
pub fn dual_gradient(
    mdp: &Mdp,
    feats: &FeatureSet,
    theta: &RewardWeights,
    phi_hat: &FeatureExpectation,
) -> Result<Vec<f64>> {
    Ok(dual(mdp, feats, theta, phi_hat, ExpectationMethod::VisitationFrequency)?.gradient)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Stop when `‖∇‖∞` falls to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub step_floor: f64,
    /// Step multiplier after an accepted (non-increasing) step.
    pub step_growth: f64,
    pub method: ExpectationMethod,
    /// Warm start; zeros when absent.
    pub initial_theta: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_iterations: 5000,
            initial_step: 0.5,
            step_floor: 1e-6,
            step_growth: 1.25,
            method: ExpectationMethod::VisitationFrequency,
            initial_theta: None,
        }
    }
}

/// Why the solver stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    IterationCap,
    /// The step shrank below the floor without reaching the tolerance.
    StepFloor,
}

#[derive(Clone, Debug)]
pub struct MaxEntSolution {
    pub theta: RewardWeights,
    pub dual_value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Model feature expectation at `theta`.
    pub expectation: FeatureExpectation,
}

impl MaxEntSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes the dual by exponentiated gradient descent.
///
/// Each step reweights every trajectory by `exp(−η f(T) · ∇)` and
/// renormalizes; within the exponential family that is the additive update
/// `θ ← θ − η ∇`. The step starts at `initial_step`, is halved whenever the
/// dual would increase and grows by `step_growth` after accepted steps.
pub fn solve(
    phi_hat: &FeatureExpectation,
    mdp: &Mdp,
    feats: &FeatureSet,
    opts: &SolveOptions,
) -> Result<MaxEntSolution> {
    let k = feats.k();
    if phi_hat.0.len() != k {
        return Err(Error::Dimension {
            what: "target feature expectation",
            expected: k,
            got: phi_hat.0.len(),
        });
    }
    let upper = (mdp.horizon() + 1) as f64;
    for (i, &x) in phi_hat.0.iter().enumerate() {
        if !x.is_finite() || x < -1e-12 || x > upper + 1e-12 {
            return Err(Error::Precondition(format!(
                "feature expectation component {i} = {x} outside [0, {upper}]"
            )));
        }
    }

    let mut theta = match &opts.initial_theta {
        Some(t) if t.len() == k => RewardWeights::new(t.clone())?,
        Some(t) => {
            return Err(Error::Dimension {
                what: "initial theta",
                expected: k,
                got: t.len(),
            })
        }
        None => RewardWeights::zeros(k),
    };
    let mut current = dual(mdp, feats, &theta, phi_hat, opts.method)?;
    if !current.value.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            last_theta: theta.as_slice().to_vec(),
        });
    }
    let mut step = opts.initial_step;
    let mut iterations = 0;
    let mut status = SolveStatus::IterationCap;

    while iterations < opts.max_iterations {
        if sup_norm(&current.gradient) <= opts.tolerance {
            status = SolveStatus::Converged;
            break;
        }
        iterations += 1;
        let candidate: Vec<f64> = theta
            .as_slice()
            .iter()
            .zip(&current.gradient)
            .map(|(t, g)| t - step * g)
            .collect();
        if candidate.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                iteration: iterations,
                last_theta: theta.as_slice().to_vec(),
            });
        }
        let cand_theta = RewardWeights::new(candidate)?;
        let next = dual(mdp, feats, &cand_theta, phi_hat, opts.method)?;
        if !next.value.is_finite() || next.gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: iterations,
                last_theta: theta.as_slice().to_vec(),
            });
        }
        if next.value <= current.value {
            theta = cand_theta;
            current = next;
            step *= opts.step_growth;
        } else {
            step *= 0.5;
            if step < opts.step_floor {
                status = SolveStatus::StepFloor;
                break;
            }
        }
    }
    if status == SolveStatus::IterationCap && sup_norm(&current.gradient) <= opts.tolerance {
        status = SolveStatus::Converged;
    }

    Ok(MaxEntSolution {
        grad_norm: sup_norm(&current.gradient),
        dual_value: current.value,
        expectation: current.expectation,
        theta,
        iterations,
        status,
    })
}
