//! Robust IRL: maximum-entropy IRL when the expert's trajectories are hidden.
//!
//! The learner sees one [`ObservationSequence`] per demonstration instead of
//! the state-action pairs. Expectation-maximization alternates between
//!
//! * an E-step that replaces the empirical feature expectation by the
//!   posterior expectation `Σ_ω P̃r(ω) Σ_T Pr(T | ω; θ) f(T)`, and
//! * an M-step that re-solves the maximum-entropy dual with that posterior
//!   expectation as the matching target.
//!
//! The trajectory prior inside the posterior is
//! `Pr(s⁰) Π Pr(s^{i+1} | s^i, a^i) Π Pr(a^i | s^i)` with the Boltzmann
//! policy of the current weights. The E-step is exact (enumeration) when the
//! joint assignment space is small, and otherwise Gibbs-sampled one
//! `(s, a)` node at a time from its Markov blanket.
//!
//! The joint `(ω, T)` program is not convex. Its exact Lagrangian derivative
//! has no closed form, so the M-step uses the usual approximation in which the
//! distribution over trajectories depends on `ω` only through the posterior
//! feature expectation. Under that approximation the observed-data
//! log-likelihood need not increase at every iteration; the driver records
//! decreases in the trace instead of failing.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logspace::ln;
use crate::maxent::{self, FeatureExpectation, MaxEntSolution, SolveOptions, Trajectory, DEFAULT_ENUMERATION_CAP};
use crate::mdp::{boltzmann_policy, reward_table, FeatureSet, Mdp, Policy, RewardWeights};
use crate::obs::{ObservationModel, ObservationSequence};

// ---------------------------------------------------------------------------
// Hidden MDP
// ---------------------------------------------------------------------------

/// The expert's MDP, its features and the learner's observation model.
#[derive(Clone, Debug)]
pub struct HiddenMdp {
    pub mdp: Mdp,
    pub feats: FeatureSet,
    pub obs: ObservationModel,
}

impl HiddenMdp {
    pub fn new(mdp: Mdp, feats: FeatureSet, obs: ObservationModel) -> Result<Self> {
        if feats.n_pairs() != mdp.n_pairs() {
            return Err(Error::Dimension {
                what: "feature table",
                expected: mdp.n_pairs(),
                got: feats.n_pairs(),
            });
        }
        if obs.n_pairs() != mdp.n_pairs() {
            return Err(Error::Dimension {
                what: "observation model",
                expected: mdp.n_pairs(),
                got: obs.n_pairs(),
            });
        }
        Ok(Self { mdp, feats, obs })
    }

    /// Same MDP and features under a different observation model.
    pub fn with_obs(&self, obs: ObservationModel) -> Result<Self> {
        Self::new(self.mdp.clone(), self.feats.clone(), obs)
    }

    /// Per-epoch likelihood vectors, `L + 1` rows of `|S||A|` entries.
    pub fn likelihoods(&self, omega: &ObservationSequence) -> Result<Vec<Vec<f64>>> {
        let expected = self.mdp.horizon() + 1;
        if omega.len() != expected {
            return Err(Error::Dimension {
                what: "observation sequence",
                expected,
                got: omega.len(),
            });
        }
        Ok(omega.epochs.iter().map(|o| self.obs.step_likelihoods(o)).collect())
    }
}

// ---------------------------------------------------------------------------
// Prior, likelihood, posterior
// ---------------------------------------------------------------------------

fn check_policy(mdp: &Mdp, pi: &Policy) -> Result<()> {
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(Error::Dimension {
            what: "policy",
            expected: mdp.n_pairs(),
            got: pi.n_states() * pi.n_actions(),
        });
    }
    Ok(())
}

/// `log Pr(T)` under the dynamics and policy; `-inf` for impossible `T`.
pub fn traj_log_prior(traj: &Trajectory, mdp: &Mdp, pi: &Policy) -> Result<f64> {
    traj.validate(mdp)?;
    check_policy(mdp, pi)?;
    let steps = traj.steps();
    let mut lp = ln(mdp.start()[steps[0].0]);
    for (i, &(s, a)) in steps.iter().enumerate() {
        lp += ln(pi.prob(s, a));
        if let Some(&(next, _)) = steps.get(i + 1) {
            lp += ln(mdp.transition_prob(s, a, next));
        }
    }
    Ok(lp)
}

pub fn traj_prior(traj: &Trajectory, hm: &HiddenMdp, pi: &Policy) -> Result<f64> {
    Ok(traj_log_prior(traj, &hm.mdp, pi)?.exp())
}

fn log_obs_from(lik: &[Vec<f64>], traj: &Trajectory, n_actions: usize) -> f64 {
    traj.steps()
        .iter()
        .zip(lik)
        .map(|(&(s, a), row)| ln(row[s * n_actions + a]))
        .sum()
}

/// `log Π Pr(o^i | s^i, a^i)`.
pub fn obs_log_likelihood(omega: &ObservationSequence, traj: &Trajectory, hm: &HiddenMdp) -> Result<f64> {
    traj.validate(&hm.mdp)?;
    let lik = hm.likelihoods(omega)?;
    Ok(log_obs_from(&lik, traj, hm.mdp.n_actions()))
}

pub fn obs_given_traj(omega: &ObservationSequence, traj: &Trajectory, hm: &HiddenMdp) -> Result<f64> {
    Ok(obs_log_likelihood(omega, traj, hm)?.exp())
}

/// `log Σ_T Pr(ω | T) Pr(T)` by the forward algorithm over pairs.
pub fn log_evidence_from(lik: &[Vec<f64>], mdp: &Mdp, pi: &Policy) -> f64 {
    let n_a = mdp.n_actions();
    let n_p = mdp.n_pairs();
    let mut alpha: Vec<f64> = (0..n_p)
        .map(|p| mdp.start()[p / n_a] * pi.as_slice()[p] * lik[0][p])
        .collect();
    let mut log_scale = 0.0;
    let mut next_state = vec![0.0; mdp.n_states()];
    for t in 0..lik.len() {
        let z: f64 = alpha.iter().sum();
        if z <= 0.0 {
            return f64::NEG_INFINITY;
        }
        log_scale += z.ln();
        alpha.iter_mut().for_each(|x| *x /= z);
        if t + 1 == lik.len() {
            break;
        }
        next_state.iter_mut().for_each(|x| *x = 0.0);
        for (p, &w) in alpha.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for &(s2, pr) in mdp.pair_successors(p) {
                next_state[s2] += w * pr;
            }
        }
        let lik_next = &lik[t + 1];
        for (p, x) in alpha.iter_mut().enumerate() {
            *x = next_state[p / n_a] * pi.as_slice()[p] * lik_next[p];
        }
    }
    log_scale
}

pub fn log_evidence(omega: &ObservationSequence, hm: &HiddenMdp, pi: &Policy) -> Result<f64> {
    check_policy(&hm.mdp, pi)?;
    Ok(log_evidence_from(&hm.likelihoods(omega)?, &hm.mdp, pi))
}

/// `Pr(T | ω)`, normalized over every trajectory.
pub fn posterior(traj: &Trajectory, omega: &ObservationSequence, hm: &HiddenMdp, pi: &Policy) -> Result<f64> {
    let lik = hm.likelihoods(omega)?;
    let evidence = log_evidence(omega, hm, pi)?;
    if evidence == f64::NEG_INFINITY {
        return Err(Error::DegenerateEvidence { index: 0 });
    }
    let joint = traj_log_prior(traj, &hm.mdp, pi)? + log_obs_from(&lik, traj, hm.mdp.n_actions());
    Ok((joint - evidence).exp())
}

/// Observed-data log-likelihood `Σ_ω log Pr(ω)` of a demonstration set.
pub fn observed_log_likelihood(omega_set: &[ObservationSequence], hm: &HiddenMdp, pi: &Policy) -> Result<f64> {
    let mut total = 0.0;
    for omega in omega_set {
        total += log_evidence(omega, hm, pi)?;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// E-step
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EStepMethod {
    Exact,
    Gibbs,
}

impl std::fmt::Display for EStepMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EStepMethod::Exact => "exact",
            EStepMethod::Gibbs => "gibbs",
        })
    }
}

/// Which E-step the EM driver runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum EStepChoice {
    /// Exact when the joint assignment count is under the cap, else Gibbs.
    #[default]
    Auto,
    Exact,
    Gibbs,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EStepDiagnostics {
    /// Trajectories enumerated (exact) or samples kept (Gibbs), summed over `ω`.
    pub samples: usize,
    /// Largest block-to-block change of any chain's running mean.
    pub delta: f64,
    pub converged: bool,
    /// Total sweeps across chains, burn-in included.
    pub sweeps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorFeatureExpectation {
    pub phi: FeatureExpectation,
    pub method: EStepMethod,
    pub diagnostics: EStepDiagnostics,
}

fn check_omega_set(omega_set: &[ObservationSequence]) -> Result<()> {
    if omega_set.is_empty() {
        return Err(Error::Precondition(
            "at least one observation sequence is required".into(),
        ));
    }
    Ok(())
}

/// Posterior feature expectation by enumerating every feasible trajectory.
pub fn exact_estep(
    omega_set: &[ObservationSequence],
    hm: &HiddenMdp,
    pi: &Policy,
) -> Result<PosteriorFeatureExpectation> {
    exact_estep_capped(omega_set, hm, pi, DEFAULT_ENUMERATION_CAP)
}

pub fn exact_estep_capped(
    omega_set: &[ObservationSequence],
    hm: &HiddenMdp,
    pi: &Policy,
    cap: f64,
) -> Result<PosteriorFeatureExpectation> {
    check_omega_set(omega_set)?;
    check_policy(&hm.mdp, pi)?;
    let size = hm.mdp.joint_assignment_count();
    if size > cap {
        return Err(Error::Capacity {
            size,
            cap,
            hint: "the Gibbs E-step",
        });
    }
    let trajs = maxent::feasible_trajectories(&hm.mdp, cap)?;
    let counts: Vec<Vec<f64>> = trajs.iter().map(|t| maxent::feature_count(t, &hm.feats)).collect();
    let priors: Vec<f64> = trajs
        .iter()
        .map(|t| traj_log_prior(t, &hm.mdp, pi))
        .collect::<Result<_>>()?;
    let k = hm.feats.k();
    let n_a = hm.mdp.n_actions();
    let mut phi = vec![0.0; k];
    let mut logs = vec![0.0; trajs.len()];
    for (index, omega) in omega_set.iter().enumerate() {
        let lik = hm.likelihoods(omega)?;
        for ((l, t), prior) in logs.iter_mut().zip(&trajs).zip(&priors) {
            *l = prior + log_obs_from(&lik, t, n_a);
        }
        if crate::logspace::normalize_log(&mut logs) == f64::NEG_INFINITY {
            return Err(Error::DegenerateEvidence { index });
        }
        for (w, c) in logs.iter().zip(&counts) {
            for (p, x) in phi.iter_mut().zip(c) {
                *p += w * x;
            }
        }
    }
    let n = omega_set.len() as f64;
    Ok(PosteriorFeatureExpectation {
        phi: FeatureExpectation(phi.into_iter().map(|x| x / n).collect()),
        method: EStepMethod::Exact,
        diagnostics: EStepDiagnostics {
            samples: trajs.len() * omega_set.len(),
            delta: 0.0,
            converged: true,
            sweeps: 0,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsOptions {
    /// Stop when the running mean moves less than this between blocks.
    pub epsilon: f64,
    /// Sweeps discarded before collecting samples.
    pub burn_in: usize,
    /// Sweeps between kept samples.
    pub thinning: usize,
    /// Kept samples per convergence block.
    pub block_size: usize,
    pub max_blocks: usize,
    /// Consecutive nodes resampled jointly per update; 1 is single-site.
    pub window: usize,
    pub seed: u64,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            burn_in: 500,
            thinning: 5,
            block_size: 200,
            max_blocks: 200,
            window: 3,
            seed: 0,
        }
    }
}

/// One Gibbs chain over the hidden trajectory of a single `ω`.
struct Chain<'a> {
    mdp: &'a Mdp,
    pi: &'a [f64],
    lik: &'a [Vec<f64>],
    z: Vec<usize>,
    weights: Vec<(usize, f64)>,
    // Scratch space of window updates.
    alpha: Vec<Vec<(usize, f64)>>,
    dense: Vec<f64>,
    touched: Vec<usize>,
    drawn: Vec<usize>,
}

impl<'a> Chain<'a> {
    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    /// Highest-joint trajectory by max-product dynamic programming.
    fn viterbi(&mut self) {
        let n_a = self.n_actions();
        let n_p = self.mdp.n_pairs();
        let horizon = self.lik.len() - 1;
        let mut score: Vec<f64> = (0..n_p)
            .map(|p| ln(self.mdp.start()[p / n_a]) + ln(self.pi[p]) + ln(self.lik[0][p]))
            .collect();
        let mut back = vec![vec![0usize; n_p]; horizon + 1];
        for t in 1..=horizon {
            let mut best_into = vec![(f64::NEG_INFINITY, 0usize); self.mdp.n_states()];
            for (p, &sc) in score.iter().enumerate() {
                if sc == f64::NEG_INFINITY {
                    continue;
                }
                for &(s2, pr) in self.mdp.pair_successors(p) {
                    let v = sc + pr.ln();
                    if v > best_into[s2].0 {
                        best_into[s2] = (v, p);
                    }
                }
            }
            let mut next = vec![f64::NEG_INFINITY; n_p];
            for p in 0..n_p {
                let (v, from) = best_into[p / n_a];
                next[p] = v + ln(self.pi[p]) + ln(self.lik[t][p]);
                back[t][p] = from;
            }
            score = next;
        }
        let mut p = (0..n_p)
            .max_by(|&x, &y| score[x].total_cmp(&score[y]).then(y.cmp(&x)))
            .unwrap_or(0);
        let mut z = vec![0; horizon + 1];
        for t in (0..=horizon).rev() {
            z[t] = p;
            p = back[t][p];
        }
        self.z = z;
    }

    /// Resamples the pair at epoch `t` from its Markov blanket.
    fn update<R: Rng>(&mut self, t: usize, rng: &mut R) {
        let n_a = self.n_actions();
        let horizon = self.z.len() - 1;
        let next_state = (t < horizon).then(|| self.z[t + 1] / n_a);
        let lik = &self.lik[t];
        let pi = self.pi;
        let mdp = self.mdp;
        self.weights.clear();
        let push = |p: usize, base: f64, weights: &mut Vec<(usize, f64)>| {
            let mut w = base * pi[p] * lik[p];
            if w == 0.0 {
                return;
            }
            if let Some(s2) = next_state {
                w *= mdp.transition_prob(p / n_a, p % n_a, s2);
                if w == 0.0 {
                    return;
                }
            }
            weights.push((p, w));
        };
        let mut weights = std::mem::take(&mut self.weights);
        if t == 0 {
            match next_state {
                Some(s2) => {
                    for &(p, _) in mdp.predecessors(s2) {
                        push(p, mdp.start()[p / n_a], &mut weights);
                    }
                }
                None => {
                    for p in 0..mdp.n_pairs() {
                        push(p, mdp.start()[p / n_a], &mut weights);
                    }
                }
            }
        } else {
            for &(s, pr) in mdp.pair_successors(self.z[t - 1]) {
                for a in 0..n_a {
                    push(s * n_a + a, pr, &mut weights);
                }
            }
        }
        let total: f64 = weights.iter().map(|&(_, w)| w).sum();
        if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = weights[weights.len() - 1].0;
            for &(p, w) in &weights {
                if u < w {
                    chosen = p;
                    break;
                }
                u -= w;
            }
            self.z[t] = chosen;
        }
        self.weights = weights;
    }

    /// Resamples epochs `t0..=t1` jointly from their conditional given the
    /// nodes just outside the window, by forward filtering and backward
    /// sampling inside it.
    fn update_window<R: Rng>(&mut self, t0: usize, t1: usize, rng: &mut R) {
        let n_a = self.n_actions();
        let n_p = self.mdp.n_pairs();
        let horizon = self.z.len() - 1;
        let mdp = self.mdp;
        let (pi, lik) = (self.pi, self.lik);
        let width = t1 - t0 + 1;
        if self.alpha.len() < width {
            self.alpha.resize_with(width, Vec::new);
        }
        self.dense.resize(n_p, 0.0);
        let normalize = |v: &mut Vec<(usize, f64)>| {
            let total: f64 = v.iter().map(|&(_, w)| w).sum();
            if total > 0.0 {
                v.iter_mut().for_each(|(_, w)| *w /= total);
            }
        };

        let first = &mut self.alpha[0];
        first.clear();
        if t0 == 0 {
            for p in 0..n_p {
                let w = mdp.start()[p / n_a] * pi[p] * lik[0][p];
                if w > 0.0 {
                    first.push((p, w));
                }
            }
        } else {
            for &(s, pr) in mdp.pair_successors(self.z[t0 - 1]) {
                for a in 0..n_a {
                    let p = s * n_a + a;
                    let w = pr * pi[p] * lik[t0][p];
                    if w > 0.0 {
                        first.push((p, w));
                    }
                }
            }
        }
        normalize(first);
        for k in 1..width {
            let (done, rest) = self.alpha.split_at_mut(k);
            self.touched.clear();
            for &(p, w) in &done[k - 1] {
                for &(s, pr) in mdp.pair_successors(p) {
                    for a in 0..n_a {
                        let q = s * n_a + a;
                        if self.dense[q] == 0.0 {
                            self.touched.push(q);
                        }
                        self.dense[q] += w * pr;
                    }
                }
            }
            let next = &mut rest[0];
            next.clear();
            for &q in &self.touched {
                let w = self.dense[q] * pi[q] * lik[t0 + k][q];
                self.dense[q] = 0.0;
                if w > 0.0 {
                    next.push((q, w));
                }
            }
            normalize(next);
        }

        self.drawn.clear();
        self.drawn.resize(width, 0);
        let mut next_state = (t1 < horizon).then(|| self.z[t1 + 1] / n_a);
        for k in (0..width).rev() {
            self.weights.clear();
            for &(p, w) in &self.alpha[k] {
                let w = w * next_state.map_or(1.0, |s2| mdp.transition_prob(p / n_a, p % n_a, s2));
                if w > 0.0 {
                    self.weights.push((p, w));
                }
            }
            let total: f64 = self.weights.iter().map(|&(_, w)| w).sum();
            if total <= 0.0 {
                return;
            }
            let mut u = rng.random::<f64>() * total;
            let mut chosen = self.weights[self.weights.len() - 1].0;
            for &(p, w) in &self.weights {
                if u < w {
                    chosen = p;
                    break;
                }
                u -= w;
            }
            self.drawn[k] = chosen;
            next_state = Some(chosen / n_a);
        }
        self.z[t0..=t1].copy_from_slice(&self.drawn);
    }

    /// `L + 1` node updates: single sites when `window` is 1, otherwise
    /// windows whose start is uniform over every placement that overlaps the
    /// trajectory, clipped at its ends.
    fn sweep<R: Rng>(&mut self, window: usize, rng: &mut R) {
        let len = self.z.len();
        if window <= 1 {
            for _ in 0..len {
                let t = rng.random_range(0..len);
                self.update(t, rng);
            }
            return;
        }
        for _ in 0..len.div_ceil(window) {
            let start = rng.random_range(0..len + window - 1) as isize - (window as isize - 1);
            let t0 = start.max(0) as usize;
            let t1 = ((start + window as isize - 1) as usize).min(len - 1);
            self.update_window(t0, t1, rng);
        }
    }

    fn accumulate(&self, feats: &FeatureSet, acc: &mut [f64]) {
        for &p in &self.z {
            for (a, f) in acc.iter_mut().zip(feats.pair_features(p)) {
                *a += f;
            }
        }
    }
}

/// The chain's RNG: one stream per observation sequence under a seed.
fn chain_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Posterior feature expectation by Gibbs sampling, one chain per `ω`.
///
/// Each chain starts from the Viterbi path, the trajectory with the highest
/// prior times likelihood, so it begins inside the main posterior mode. A
/// sweep resamples `L + 1` uniformly chosen nodes. After `burn_in`
/// sweeps, every `thinning`-th sweep contributes a sample; after each block
/// of `block_size` samples the running mean is compared with the previous
/// block's and the chain stops once the change is below `epsilon`.
pub fn gibbs_estep(
    omega_set: &[ObservationSequence],
    hm: &HiddenMdp,
    pi: &Policy,
    opts: &GibbsOptions,
) -> Result<PosteriorFeatureExpectation> {
    check_omega_set(omega_set)?;
    check_policy(&hm.mdp, pi)?;
    if opts.block_size == 0 || opts.thinning == 0 || opts.max_blocks == 0 || opts.window == 0 {
        return Err(Error::Config(
            "Gibbs block size, thinning, block cap and window must be positive".into(),
        ));
    }
    let k = hm.feats.k();
    let mut phi = vec![0.0; k];
    let mut diag = EStepDiagnostics {
        converged: true,
        ..Default::default()
    };
    for (index, omega) in omega_set.iter().enumerate() {
        let lik = hm.likelihoods(omega)?;
        if log_evidence_from(&lik, &hm.mdp, pi) == f64::NEG_INFINITY {
            return Err(Error::DegenerateEvidence { index });
        }
        let mut chain = Chain {
            mdp: &hm.mdp,
            pi: pi.as_slice(),
            lik: &lik,
            z: Vec::new(),
            weights: Vec::new(),
            alpha: Vec::new(),
            dense: Vec::new(),
            touched: Vec::new(),
            drawn: Vec::new(),
        };
        chain.viterbi();
        let mut rng = chain_rng(opts.seed, index);
        for _ in 0..opts.burn_in {
            chain.sweep(opts.window, &mut rng);
        }
        let mut sweeps = opts.burn_in;
        let mut acc = vec![0.0; k];
        let mut n = 0usize;
        let mut previous: Option<Vec<f64>> = None;
        let mut converged = false;
        let mut delta = f64::INFINITY;
        for _ in 0..opts.max_blocks {
            for _ in 0..opts.block_size {
                for _ in 0..opts.thinning {
                    chain.sweep(opts.window, &mut rng);
                }
                sweeps += opts.thinning;
                chain.accumulate(&hm.feats, &mut acc);
                n += 1;
            }
            let mean: Vec<f64> = acc.iter().map(|x| x / n as f64).collect();
            if let Some(prev) = &previous {
                delta = prev.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if delta < opts.epsilon {
                    converged = true;
                    previous = Some(mean);
                    break;
                }
            }
            previous = Some(mean);
        }
        let mean = previous.unwrap_or_else(|| vec![0.0; k]);
        for (p, m) in phi.iter_mut().zip(&mean) {
            *p += m;
        }
        diag.samples += n;
        diag.sweeps += sweeps;
        diag.delta = diag.delta.max(if delta.is_finite() { delta } else { 0.0 });
        diag.converged &= converged;
    }
    let n = omega_set.len() as f64;
    Ok(PosteriorFeatureExpectation {
        phi: FeatureExpectation(phi.into_iter().map(|x| x / n).collect()),
        method: EStepMethod::Gibbs,
        diagnostics: diag,
    })
}

// ---------------------------------------------------------------------------
// M-step and EM driver
// ---------------------------------------------------------------------------

/// Re-solves the maximum-entropy dual with the posterior expectation as the
/// target. Maximizing the EM `Q` function is minimizing this dual.
pub fn mstep(phi: &PosteriorFeatureExpectation, hm: &HiddenMdp, opts: &SolveOptions) -> Result<MaxEntSolution> {
    maxent::solve(&phi.phi, &hm.mdp, &hm.feats, opts)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmOptions {
    /// Stop when the posterior expectation moves less than this (∞-norm).
    pub em_epsilon: f64,
    pub max_iterations: usize,
    /// Inverse temperature of the expert policy used as the prior.
    pub beta: f64,
    pub estep: EStepChoice,
    pub gibbs: GibbsOptions,
    pub solve: SolveOptions,
    /// Seeds the initial weights.
    pub seed: u64,
    pub enumeration_cap: f64,
    /// Start each M-step from the previous weights.
    pub warm_start: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            em_epsilon: 0.01,
            max_iterations: 100,
            beta: 5.0,
            estep: EStepChoice::Auto,
            gibbs: GibbsOptions::default(),
            solve: SolveOptions::default(),
            seed: 0,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            warm_start: true,
        }
    }
}

/// One EM iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmRecord {
    pub iteration: usize,
    /// Weights after the M-step.
    pub theta: Vec<f64>,
    /// Posterior expectation from the E-step.
    pub phi: Vec<f64>,
    pub dual: f64,
    pub estep: EStepMethod,
    pub estep_diagnostics: EStepDiagnostics,
    /// Observed-data log-likelihood under the E-step's policy.
    pub log_likelihood: f64,
    pub solver_converged: bool,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub initial_theta: Vec<f64>,
    pub records: Vec<EmRecord>,
    pub converged: bool,
    /// Iterations whose log-likelihood fell by more than `1e-6`.
    pub likelihood_decreases: Vec<usize>,
}

impl EmTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    /// CSV with one row per iteration. Wall-clock times are left out so the
    /// output is reproducible.
    pub fn to_csv(&self) -> String {
        let k = self.initial_theta.len();
        let mut out = String::from("iteration");
        for i in 0..k {
            out += &format!(",theta_{i}");
        }
        for i in 0..k {
            out += &format!(",phi_{i}");
        }
        out += ",dual,estep_method,converged,log_likelihood\n";
        for r in &self.records {
            out += &r.iteration.to_string();
            for x in r.theta.iter().chain(&r.phi) {
                out += &format!(",{x:e}");
            }
            out += &format!(
                ",{:e},{},{},{:e}\n",
                r.dual, r.estep, r.estep_diagnostics.converged, r.log_likelihood
            );
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct RobustIrlResult {
    pub theta: RewardWeights,
    /// Boltzmann policy of `theta`.
    pub policy: Policy,
    pub solution: MaxEntSolution,
    pub trace: EmTrace,
}

/// Runs the E-step chosen by `opts`.
pub fn estep(
    omega_set: &[ObservationSequence],
    hm: &HiddenMdp,
    pi: &Policy,
    opts: &EmOptions,
) -> Result<PosteriorFeatureExpectation> {
    let exact = match opts.estep {
        EStepChoice::Exact => true,
        EStepChoice::Gibbs => false,
        EStepChoice::Auto => hm.mdp.joint_assignment_count() <= opts.enumeration_cap,
    };
    if exact {
        exact_estep_capped(omega_set, hm, pi, opts.enumeration_cap)
    } else {
        gibbs_estep(omega_set, hm, pi, &opts.gibbs)
    }
}

/// Uniform draw in `[-1, 1]^k` from `seed`.
pub fn initial_theta(k: usize, seed: u64) -> RewardWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RewardWeights::new((0..k).map(|_| rng.random_range(-1.0..=1.0)).collect()).expect("finite draws")
}

/// Expectation-maximization for IRL from observation sequences.
pub fn robust_irl(omega_set: &[ObservationSequence], hm: &HiddenMdp, opts: &EmOptions) -> Result<RobustIrlResult> {
    check_omega_set(omega_set)?;
    for omega in omega_set {
        if omega.len() != hm.mdp.horizon() + 1 {
            return Err(Error::Dimension {
                what: "observation sequence",
                expected: hm.mdp.horizon() + 1,
                got: omega.len(),
            });
        }
    }
    let clock = Instant::now();
    let k = hm.feats.k();
    let mut theta = initial_theta(k, opts.seed);
    let mut pi = boltzmann_policy(&hm.mdp, &reward_table(&theta, &hm.feats)?, opts.beta)?;
    let mut trace = EmTrace {
        initial_theta: theta.as_slice().to_vec(),
        ..Default::default()
    };
    let mut previous_phi: Option<FeatureExpectation> = None;
    let mut last_solution = None;

    for iteration in 1..=opts.max_iterations {
        let e = estep(omega_set, hm, &pi, opts)?;
        let log_likelihood = observed_log_likelihood(omega_set, hm, &pi)?;
        let mut solve_opts = opts.solve.clone();
        if opts.warm_start {
            solve_opts.initial_theta = Some(theta.as_slice().to_vec());
        }
        let sol = mstep(&e, hm, &solve_opts)?;
        theta = sol.theta.clone();
        pi = boltzmann_policy(&hm.mdp, &reward_table(&theta, &hm.feats)?, opts.beta)?;

        if let Some(prev) = trace.records.last() {
            if log_likelihood < prev.log_likelihood - 1e-6 {
                trace.likelihood_decreases.push(iteration);
            }
        }
        trace.records.push(EmRecord {
            iteration,
            theta: theta.as_slice().to_vec(),
            phi: e.phi.0.clone(),
            dual: sol.dual_value,
            estep: e.method,
            estep_diagnostics: e.diagnostics.clone(),
            log_likelihood,
            solver_converged: sol.converged(),
            elapsed_seconds: clock.elapsed().as_secs_f64(),
        });
        let done = previous_phi
            .as_ref()
            .is_some_and(|prev| prev.max_abs_diff(&e.phi) < opts.em_epsilon);
        previous_phi = Some(e.phi);
        last_solution = Some(sol);
        if done {
            trace.converged = true;
            break;
        }
    }

    let solution = last_solution.ok_or_else(|| Error::Config("max_iterations must be at least 1".into()))?;
    Ok(RobustIrlResult {
        theta,
        policy: pi,
        solution,
        trace,
    })
}
