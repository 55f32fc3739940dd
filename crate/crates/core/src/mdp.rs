//! Finite MDPs with linear binary-feature rewards.
//!
//! The expert is modelled as a finite MDP whose reward is a weighted sum of
//! binary features, `R(s, a) = Σ_k θ_k φ_k(s, a)`. This module holds the MDP
//! itself, the feature table, the planners used to turn a reward into
//! behaviour (hard value iteration and a Boltzmann soft-max policy), exact
//! policy evaluation and the inverse learning error used to score a learned
//! reward against the expert's.
//!
//! All reward and policy tables are flat vectors indexed by the pair index
//! `s * |A| + a` (see [`Mdp::pair`]).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STOCHASTIC_TOL: f64 = 1e-9;
const VALUE_TOL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// States and actions
// ---------------------------------------------------------------------------

/// One of the four cardinal headings on a grid.
///
/// Grid rows grow downward, so `North` decreases the row index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    /// Grid displacement `(dcol, drow)` of one step in this heading.
    pub fn delta(self) -> (i64, i64) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }

    pub fn reverse(self) -> Heading {
        match self {
            Heading::North => Heading::South,
            Heading::East => Heading::West,
            Heading::South => Heading::North,
            Heading::West => Heading::East,
        }
    }

    /// Quarter turn clockwise.
    pub fn turn_cw(self) -> Heading {
        match self {
            Heading::North => Heading::East,
            Heading::East => Heading::South,
            Heading::South => Heading::West,
            Heading::West => Heading::North,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Heading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Heading::North => "N",
            Heading::East => "E",
            Heading::South => "S",
            Heading::West => "W",
        };
        f.write_str(s)
    }
}

/// Expert state: a grid cell and the heading the expert faces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct State {
    pub cell: usize,
    pub heading: Heading,
}

/// Index into the MDP's action list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

// ---------------------------------------------------------------------------
// Mdp
// ---------------------------------------------------------------------------

/// A finite-horizon MDP with a sparse transition kernel.
///
/// `horizon` is the index `L` of the last decision epoch, so trajectories
/// carry `L + 1` state-action pairs. `discount` is only used by the
/// infinite-horizon planners that score policies.
#[derive(Clone, Debug)]
pub struct Mdp {
    states: Vec<State>,
    actions: Vec<String>,
    /// Per pair: `(next_state, probability)` with strictly positive mass,
    /// sorted by next state.
    successors: Vec<Vec<(usize, f64)>>,
    /// Per state: `(pair, probability)` of every pair that can reach it.
    predecessors: Vec<Vec<(usize, f64)>>,
    start: Vec<f64>,
    horizon: usize,
    discount: f64,
}

impl Mdp {
    /// Builds an MDP from per-pair successor lists.
    ///
    /// Duplicate targets are merged and zero-probability entries dropped.
    pub fn new(
        states: Vec<State>,
        actions: Vec<String>,
        successors: Vec<Vec<(usize, f64)>>,
        start: Vec<f64>,
        horizon: usize,
        discount: f64,
    ) -> Result<Self> {
        let n_s = states.len();
        let n_a = actions.len();
        if n_s == 0 || n_a == 0 {
            return Err(Error::Validation("MDP needs at least one state and one action".into()));
        }
        if successors.len() != n_s * n_a {
            return Err(Error::Dimension {
                what: "transition table",
                expected: n_s * n_a,
                got: successors.len(),
            });
        }
        if start.len() != n_s {
            return Err(Error::Dimension {
                what: "start distribution",
                expected: n_s,
                got: start.len(),
            });
        }
        if horizon == 0 {
            return Err(Error::Validation("horizon must be at least 1".into()));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::Validation(format!("discount {discount} outside (0, 1)")));
        }
        check_distribution(&start, "start distribution")?;

        let mut merged = Vec::with_capacity(successors.len());
        for (pair, row) in successors.into_iter().enumerate() {
            let mut row_sorted: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (next, p) in row {
                if next >= n_s {
                    return Err(Error::Validation(format!(
                        "pair {pair} transitions to unknown state {next}"
                    )));
                }
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::Validation(format!("pair {pair} has invalid probability {p}")));
                }
                if p == 0.0 {
                    continue;
                }
                match row_sorted.iter_mut().find(|(s, _)| *s == next) {
                    Some(entry) => entry.1 += p,
                    None => row_sorted.push((next, p)),
                }
            }
            row_sorted.sort_by_key(|&(s, _)| s);
            let total: f64 = row_sorted.iter().map(|&(_, p)| p).sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Validation(format!(
                    "transition row for pair {pair} sums to {total}"
                )));
            }
            merged.push(row_sorted);
        }

        let mut predecessors = vec![Vec::new(); n_s];
        for (pair, row) in merged.iter().enumerate() {
            for &(next, p) in row {
                predecessors[next].push((pair, p));
            }
        }

        Ok(Self {
            states,
            actions,
            successors: merged,
            predecessors,
            start,
            horizon,
            discount,
        })
    }

    /// Builds an MDP from a dense `|S| x |A| x |S|` kernel. States are
    /// labelled `cell = index`, heading east.
    pub fn from_dense(
        n_states: usize,
        actions: Vec<String>,
        dense: &[f64],
        start: Vec<f64>,
        horizon: usize,
        discount: f64,
    ) -> Result<Self> {
        let n_a = actions.len();
        if dense.len() != n_states * n_a * n_states {
            return Err(Error::Dimension {
                what: "dense transition kernel",
                expected: n_states * n_a * n_states,
                got: dense.len(),
            });
        }
        let states = (0..n_states)
            .map(|cell| State {
                cell,
                heading: Heading::East,
            })
            .collect();
        let successors = dense
            .chunks(n_states)
            .map(|row| row.iter().copied().enumerate().collect())
            .collect();
        Self::new(states, actions, successors, start, horizon, discount)
    }

    /// Same MDP with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Validation("horizon must be at least 1".into()));
        }
        let mut out = self.clone();
        out.horizon = horizon;
        Ok(out)
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.states.len() * self.actions.len()
    }

    #[inline]
    pub fn pair(&self, s: usize, a: usize) -> usize {
        s * self.actions.len() + a
    }

    #[inline]
    pub fn split_pair(&self, pair: usize) -> (usize, usize) {
        (pair / self.actions.len(), pair % self.actions.len())
    }

    #[inline]
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.successors[self.pair(s, a)]
    }

    #[inline]
    pub fn pair_successors(&self, pair: usize) -> &[(usize, f64)] {
        &self.successors[pair]
    }

    /// Pairs `(s, a)` that reach `next` with positive probability.
    pub fn predecessors(&self, next: usize) -> &[(usize, f64)] {
        &self.predecessors[next]
    }

    pub fn transition_prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.successors(s, a)
            .iter()
            .find(|&&(t, _)| t == next)
            .map_or(0.0, |&(_, p)| p)
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn action_names(&self) -> &[String] {
        &self.actions
    }

    /// Number of joint `(s, a)` assignments over a full trajectory,
    /// `(|S| |A|)^(L+1)`, as a float so it cannot overflow.
    pub fn joint_assignment_count(&self) -> f64 {
        (self.n_pairs() as f64).powi(self.horizon as i32 + 1)
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::Validation(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::Validation(format!("{what} sums to {total}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Features and rewards
// ---------------------------------------------------------------------------

/// Binary feature table `φ(s, a) ∈ {0, 1}^K`, stored as 0.0 / 1.0.
#[derive(Clone, Debug)]
pub struct FeatureSet {
    k: usize,
    n_actions: usize,
    table: Vec<f64>,
}

impl FeatureSet {
    pub fn new(k: usize, n_states: usize, n_actions: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != n_states * n_actions * k {
            return Err(Error::Dimension {
                what: "feature table",
                expected: n_states * n_actions * k,
                got: table.len(),
            });
        }
        if let Some(bad) = table.iter().find(|&&x| x != 0.0 && x != 1.0) {
            return Err(Error::Validation(format!("feature value {bad} is not binary")));
        }
        Ok(Self { k, n_actions, table })
    }

    /// Evaluates `f(s, a)` for every pair of `mdp`.
    pub fn from_fn<F>(mdp: &Mdp, k: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, usize) -> Vec<bool>,
    {
        let mut table = Vec::with_capacity(mdp.n_pairs() * k);
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let row = f(s, a);
                if row.len() != k {
                    return Err(Error::Dimension {
                        what: "feature vector",
                        expected: k,
                        got: row.len(),
                    });
                }
                table.extend(row.into_iter().map(|b| if b { 1.0 } else { 0.0 }));
            }
        }
        Self::new(k, mdp.n_states(), mdp.n_actions(), table)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_pairs(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.table.len() / self.k
        }
    }

    #[inline]
    pub fn evaluate(&self, s: usize, a: usize) -> &[f64] {
        self.pair_features(s * self.n_actions + a)
    }

    #[inline]
    pub fn pair_features(&self, pair: usize) -> &[f64] {
        &self.table[pair * self.k..(pair + 1) * self.k]
    }
}

/// Reward weights `θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights(Vec<f64>);

impl RewardWeights {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("reward weights must be finite".into()));
        }
        Ok(Self(theta))
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, phi: &[f64]) -> f64 {
        self.0.iter().zip(phi).map(|(t, f)| t * f).sum()
    }
}

/// `R(s, a) = θ · φ(s, a)`.
pub fn reward(s: usize, a: ActionId, theta: &RewardWeights, feats: &FeatureSet) -> Result<f64> {
    check_k(theta, feats)?;
    Ok(theta.dot(feats.evaluate(s, a.0)))
}

/// Reward for every pair, indexed by [`Mdp::pair`].
pub fn reward_table(theta: &RewardWeights, feats: &FeatureSet) -> Result<Vec<f64>> {
    check_k(theta, feats)?;
    Ok((0..feats.n_pairs())
        .map(|p| theta.dot(feats.pair_features(p)))
        .collect())
}

fn check_k(theta: &RewardWeights, feats: &FeatureSet) -> Result<()> {
    if theta.len() != feats.k() {
        return Err(Error::Config(format!(
            "reward weights have length {} but the feature set has K = {}",
            theta.len(),
            feats.k()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Policies and values
// ---------------------------------------------------------------------------

/// Stochastic policy table `Pr(a | s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Dimension {
                what: "policy table",
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row, &format!("policy row {s}"))?;
        }
        Ok(Self { n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    /// Puts all mass on `actions[s]` in each state.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Validation(format!("action {a} out of range")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Self { n_actions, probs })
    }

    pub fn n_states(&self) -> usize {
        self.probs.len() / self.n_actions
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Flat table indexed by pair.
    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    fn check_shape(&self, mdp: &Mdp) -> Result<()> {
        if self.n_actions != mdp.n_actions() || self.n_states() != mdp.n_states() {
            return Err(Error::Dimension {
                what: "policy",
                expected: mdp.n_pairs(),
                got: self.probs.len(),
            });
        }
        Ok(())
    }
}

/// State values `V(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunction(pub Vec<f64>);

impl ValueFunction {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_rewards(mdp: &Mdp, r: &[f64]) -> Result<()> {
    if r.len() != mdp.n_pairs() {
        return Err(Error::Dimension {
            what: "reward table",
            expected: mdp.n_pairs(),
            got: r.len(),
        });
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("reward table has non-finite entries".into()));
    }
    Ok(())
}

/// One Bellman backup: `Q(s, a) = r(s, a) + γ Σ_s' P(s' | s, a) V(s')`.
pub fn q_values(mdp: &Mdp, r: &[f64], v: &[f64]) -> Vec<f64> {
    let gamma = mdp.discount();
    (0..mdp.n_pairs())
        .map(|p| {
            let future: f64 = mdp.pair_successors(p).iter().map(|&(t, pr)| pr * v[t]).sum();
            r[p] + gamma * future
        })
        .collect()
}

/// Optimal discounted values and the matching Q table.
pub fn optimal_q(mdp: &Mdp, r: &[f64]) -> Result<(ValueFunction, Vec<f64>)> {
    check_rewards(mdp, r)?;
    let n_a = mdp.n_actions();
    let gamma = mdp.discount();
    // Stop when the contraction bound puts V within VALUE_TOL / 100 of V*.
    let stop = VALUE_TOL * 1e-2 * (1.0 - gamma) / gamma;
    let mut v = vec![0.0; mdp.n_states()];
    let mut q;
    loop {
        q = q_values(mdp, r, &v);
        let mut delta: f64 = 0.0;
        for (s, vs) in v.iter_mut().enumerate() {
            let best = q[s * n_a..(s + 1) * n_a]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - *vs).abs());
            *vs = best;
        }
        if delta <= stop {
            break;
        }
    }
    q = q_values(mdp, r, &v);
    Ok((ValueFunction(v), q))
}

/// Greedy action per state, ties broken toward the lowest action index.
pub fn greedy_actions(q: &[f64], n_actions: usize) -> Vec<usize> {
    q.chunks(n_actions)
        .map(|row| {
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-9 * (1.0 + best.abs());
            row.iter().position(|&x| x >= best - tol).unwrap_or(0)
        })
        .collect()
}

/// Discounted infinite-horizon value iteration.
///
/// Returns `V*` within `1e-8` in sup norm and the greedy deterministic
/// policy (lowest action index on ties).
pub fn value_iteration(mdp: &Mdp, r: &[f64]) -> Result<(ValueFunction, Policy)> {
    let (v, q) = optimal_q(mdp, r)?;
    let actions = greedy_actions(&q, mdp.n_actions());
    let policy = Policy::deterministic(mdp.n_actions(), &actions)?;
    Ok((v, policy))
}

/// Exact policy evaluation: solves `(I - γ P_π) V = r_π`.
pub fn evaluate_policy(mdp: &Mdp, pi: &Policy, r: &[f64]) -> Result<ValueFunction> {
    check_rewards(mdp, r)?;
    pi.check_shape(mdp)?;
    let n = mdp.n_states();
    let gamma = mdp.discount();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        for act in 0..mdp.n_actions() {
            let w = pi.prob(s, act);
            if w == 0.0 {
                continue;
            }
            b[s] += w * r[mdp.pair(s, act)];
            for &(t, p) in mdp.successors(s, act) {
                a[(s, t)] -= gamma * w * p;
            }
        }
    }
    let v = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Validation("policy evaluation system is singular".into()))?;
    Ok(ValueFunction(v.iter().copied().collect()))
}

/// Soft-max policy over a Q table: `Pr(a | s) ∝ exp(β Q(s, a))`.
pub fn boltzmann_from_q(q: &[f64], n_actions: usize, beta: f64) -> Result<Policy> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::Precondition(format!(
            "temperature beta = {beta} must be finite and >= 0"
        )));
    }
    let mut probs = Vec::with_capacity(q.len());
    for row in q.chunks(n_actions) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = row.iter().map(|&x| (beta * (x - m)).exp()).collect();
        let z: f64 = w.iter().sum();
        probs.extend(w.into_iter().map(|x| x / z));
    }
    Ok(Policy { n_actions, probs })
}

/// Boltzmann policy over the optimal Q values of reward `r`.
pub fn boltzmann_policy(mdp: &Mdp, r: &[f64], beta: f64) -> Result<Policy> {
    let (_, q) = optimal_q(mdp, r)?;
    boltzmann_from_q(&q, mdp.n_actions(), beta)
}

// ---------------------------------------------------------------------------
// Inverse learning error
// ---------------------------------------------------------------------------

/// Vector norm used by [`ile`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    #[default]
    L2,
    Linf,
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "L1",
            Norm::L2 => "L2",
            Norm::Linf => "Linf",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            "linf" | "inf" => Ok(Norm::Linf),
            other => Err(Error::Config(format!("unknown norm '{other}'"))),
        }
    }
}

/// Inverse learning error `‖V_learned − V_expert‖`.
pub fn ile(v_learned: &ValueFunction, v_expert: &ValueFunction, norm: Norm) -> Result<f64> {
    if v_learned.0.len() != v_expert.0.len() {
        return Err(Error::Dimension {
            what: "value functions",
            expected: v_expert.0.len(),
            got: v_learned.0.len(),
        });
    }
    let diffs = v_learned.0.iter().zip(&v_expert.0).map(|(a, b)| (a - b).abs());
    Ok(match norm {
        Norm::L1 => diffs.sum(),
        Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
        Norm::Linf => diffs.fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn single_state() -> Mdp {
        Mdp::from_dense(1, vec!["stay".into()], &[1.0], vec![1.0], 1, 0.9).unwrap()
    }

    #[test]
    fn reward_is_linear_in_features() {
        let mdp = single_state();
        let feats = FeatureSet::new(2, 1, 1, vec![1.0, 1.0]).unwrap();
        let zero = RewardWeights::zeros(2);
        assert_eq!(reward(0, ActionId(0), &zero, &feats).unwrap(), 0.0);
        let w = RewardWeights::new(vec![1.0, -0.5]).unwrap();
        assert_eq!(reward(0, ActionId(0), &w, &feats).unwrap(), 0.5);

        let onehot = FeatureSet::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let e1 = RewardWeights::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(reward(0, ActionId(0), &e1, &onehot).unwrap(), 0.0);
        assert_eq!(mdp.n_pairs(), 1);
    }

    #[test]
    fn reward_rejects_wrong_length() {
        let feats = FeatureSet::new(2, 1, 1, vec![1.0, 0.0]).unwrap();
        let w = RewardWeights::new(vec![1.0]).unwrap();
        assert!(matches!(reward(0, ActionId(0), &w, &feats), Err(Error::Config(_))));
    }

    #[test]
    fn features_must_be_binary() {
        assert!(FeatureSet::new(1, 1, 1, vec![0.5]).is_err());
    }

    #[test]
    fn geometric_series_value() {
        let mdp = single_state();
        let (v, pi) = value_iteration(&mdp, &[1.0]).unwrap();
        assert!((v.0[0] - 10.0).abs() < 1e-8);
        assert_eq!(pi.prob(0, 0), 1.0);
    }

    #[test]
    fn zero_reward_gives_zero_value() {
        let mdp = fixtures::two_state_chain(0.0, 2, 0.5);
        let r = vec![0.0; mdp.n_pairs()];
        let (v, pi) = value_iteration(&mdp, &r).unwrap();
        assert!(v.0.iter().all(|&x| x.abs() < 1e-12));
        let ve = evaluate_policy(&mdp, &pi, &r).unwrap();
        assert!(ve.0.iter().all(|&x| x.abs() < 1e-12));
    }

    // Chain: action 0 toggles the state, action 1 stays; reward 1 in state 1.
    // Bellman by hand at γ = 0.5: V1 = 1 + 0.5 V1 = 2 (stay), V0 = 0.5 V1 = 1 (toggle).
    #[test]
    fn two_state_chain_optimal_values() {
        let mdp = fixtures::two_state_chain(0.0, 2, 0.5);
        let r = fixtures::state_one_reward(&mdp);
        let (v, pi) = value_iteration(&mdp, &r).unwrap();
        assert!((v.0[0] - 1.0).abs() < 1e-8);
        assert!((v.0[1] - 2.0).abs() < 1e-8);
        assert_eq!(pi.prob(0, 0), 1.0);
        assert_eq!(pi.prob(1, 1), 1.0);
    }

    // Uniform policy, solved by hand:
    // V0 = 0.5 (0.5 V1 + 0.5 V0), V1 = 1 + 0.5 (0.5 V0 + 0.5 V1)
    // => V0 = V1 / 3, V1 = 1.5, V0 = 0.5.
    #[test]
    fn two_state_chain_uniform_policy_values() {
        let mdp = fixtures::two_state_chain(0.0, 2, 0.5);
        let r = fixtures::state_one_reward(&mdp);
        let v = evaluate_policy(&mdp, &Policy::uniform(2, 2), &r).unwrap();
        assert!((v.0[0] - 0.5).abs() < 1e-10);
        assert!((v.0[1] - 1.5).abs() < 1e-10);
    }

    #[test]
    fn greedy_policy_evaluation_matches_value_iteration() {
        let mdp = fixtures::two_state_chain(0.1, 2, 0.9);
        let r = fixtures::state_one_reward(&mdp);
        let (v, pi) = value_iteration(&mdp, &r).unwrap();
        let ve = evaluate_policy(&mdp, &pi, &r).unwrap();
        for (a, b) in v.0.iter().zip(&ve.0) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn boltzmann_limits() {
        let mdp = fixtures::two_state_chain(0.0, 2, 0.5);
        let r = fixtures::state_one_reward(&mdp);
        let uniform = boltzmann_policy(&mdp, &r, 0.0).unwrap();
        assert!(uniform.as_slice().iter().all(|&p| (p - 0.5).abs() < 1e-15));

        let (_, greedy) = value_iteration(&mdp, &r).unwrap();
        let sharp = boltzmann_policy(&mdp, &r, 1e6).unwrap();
        for (a, b) in sharp.as_slice().iter().zip(greedy.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }

        let flat = boltzmann_from_q(&[3.0, 3.0], 2, 17.0).unwrap();
        assert_eq!(flat.as_slice(), &[0.5, 0.5]);
        assert!(boltzmann_from_q(&[0.0], 1, -1.0).is_err());
    }

    #[test]
    fn ile_examples() {
        let a = ValueFunction(vec![1.0, 2.0]);
        assert_eq!(ile(&a, &a, Norm::L2).unwrap(), 0.0);
        assert_eq!(ile(&a, &ValueFunction(vec![1.0, 1.0]), Norm::L2).unwrap(), 1.0);
        assert_eq!(ile(&a, &ValueFunction(vec![0.0, 0.0]), Norm::L1).unwrap(), 3.0);
        assert_eq!(ile(&a, &ValueFunction(vec![0.0, 0.0]), Norm::Linf).unwrap(), 2.0);
        assert!(ile(&a, &ValueFunction(vec![0.0]), Norm::L2).is_err());
    }

    #[test]
    fn non_stochastic_rows_are_rejected() {
        let bad = Mdp::from_dense(1, vec!["a".into()], &[0.9], vec![1.0], 1, 0.9);
        assert!(matches!(bad, Err(Error::Validation(_))));
        let bad_start = Mdp::from_dense(1, vec!["a".into()], &[1.0], vec![0.5], 1, 0.9);
        assert!(bad_start.is_err());
    }

    fn random_mdp(seed_probs: &[f64], n: usize, n_a: usize) -> Mdp {
        let mut dense = Vec::with_capacity(n * n_a * n);
        for row in seed_probs.chunks(n) {
            let z: f64 = row.iter().sum();
            dense.extend(row.iter().map(|x| x / z));
        }
        Mdp::from_dense(
            n,
            (0..n_a).map(|a| a.to_string()).collect(),
            &dense,
            vec![1.0 / n as f64; n],
            3,
            0.8,
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn value_iteration_is_monotone_in_rewards(
            probs in prop::collection::vec(0.05f64..1.0, 3 * 2 * 3),
            r in prop::collection::vec(-1.0f64..1.0, 6),
            bump_at in 0usize..6,
            bump in 0.0f64..2.0,
        ) {
            let mdp = random_mdp(&probs, 3, 2);
            let (v0, _) = value_iteration(&mdp, &r).unwrap();
            let mut r2 = r.clone();
            r2[bump_at] += bump;
            let (v1, _) = value_iteration(&mdp, &r2).unwrap();
            for (a, b) in v0.0.iter().zip(&v1.0) {
                prop_assert!(b + 1e-8 >= *a);
            }
        }

        #[test]
        fn optimal_policy_dominates(
            probs in prop::collection::vec(0.05f64..1.0, 3 * 2 * 3),
            r in prop::collection::vec(-1.0f64..1.0, 6),
            other in prop::collection::vec(0.01f64..1.0, 6),
        ) {
            let mdp = random_mdp(&probs, 3, 2);
            let (_, pi) = value_iteration(&mdp, &r).unwrap();
            let v_opt = evaluate_policy(&mdp, &pi, &r).unwrap();
            let mut table = Vec::new();
            for row in other.chunks(2) {
                let z: f64 = row.iter().sum();
                table.extend(row.iter().map(|x| x / z));
            }
            let alt = Policy::new(3, 2, table).unwrap();
            let v_alt = evaluate_policy(&mdp, &alt, &r).unwrap();
            for (a, b) in v_opt.0.iter().zip(&v_alt.0) {
                prop_assert!(a + 1e-8 >= *b);
            }
        }

        #[test]
        fn ile_is_a_symmetric_nonnegative_distance(
            a in prop::collection::vec(-10.0f64..10.0, 5),
            b in prop::collection::vec(-10.0f64..10.0, 5),
        ) {
            let va = ValueFunction(a);
            let vb = ValueFunction(b);
            for norm in [Norm::L1, Norm::L2, Norm::Linf] {
                prop_assert_eq!(ile(&va, &va, norm).unwrap(), 0.0);
                let d = ile(&va, &vb, norm).unwrap();
                prop_assert!(d >= 0.0);
                prop_assert_eq!(d, ile(&vb, &va, norm).unwrap());
            }
        }

        #[test]
        fn boltzmann_rows_and_greedy_mass(
            q in prop::collection::vec(-3.0f64..3.0, 6),
            b1 in 0.0f64..20.0,
            db in 0.0f64..20.0,
        ) {
            let lo = boltzmann_from_q(&q, 3, b1).unwrap();
            let hi = boltzmann_from_q(&q, 3, b1 + db).unwrap();
            let greedy = greedy_actions(&q, 3);
            for s in 0..2 {
                prop_assert!((lo.row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(hi.prob(s, greedy[s]) + 1e-12 >= lo.prob(s, greedy[s]));
            }
        }
    }
}
