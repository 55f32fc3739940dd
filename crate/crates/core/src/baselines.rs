//! Comparison methods: most-likely-trajectory IRL and random attack timing.
//!
//! The most-likely-trajectory learner decodes each epoch on its own, taking
//! the pair with the highest observation likelihood, and then runs plain
//! maximum-entropy IRL on the decoded trajectories. It ignores the
//! transition function entirely, so decoded trajectories may be impossible
//! under the dynamics; their feature counts are used as they are.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::em::HiddenMdp;
use crate::error::{Error, Result};
use crate::maxent::{self, MaxEntSolution, SolveOptions, Trajectory};
use crate::obs::ObservationSequence;

#[derive(Clone, Debug)]
pub struct MltResult {
    /// Decoded trajectory per observation sequence.
    pub trajectories: Vec<Trajectory>,
    pub solution: MaxEntSolution,
}

/// Per-epoch argmax of the observation likelihood. Ties go to the lowest
/// pair index, i.e. lowest state and then lowest action.
pub fn most_likely_trajectory(omega: &ObservationSequence, hm: &HiddenMdp) -> Result<Trajectory> {
    let n_a = hm.mdp.n_actions();
    let lik = hm.likelihoods(omega)?;
    let steps = lik
        .iter()
        .map(|row| {
            let mut best = 0;
            for (p, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = p;
                }
            }
            (best / n_a, best % n_a)
        })
        .collect();
    Ok(Trajectory::new(steps))
}

/// Decodes every sequence and learns from the decoded demonstrations.
pub fn mlt_irl(omega_set: &[ObservationSequence], hm: &HiddenMdp, opts: &SolveOptions) -> Result<MltResult> {
    if omega_set.is_empty() {
        return Err(Error::Precondition(
            "at least one observation sequence is required".into(),
        ));
    }
    let trajectories = omega_set
        .iter()
        .map(|o| most_likely_trajectory(o, hm))
        .collect::<Result<Vec<_>>>()?;
    let phi = maxent::empirical_feature_expectation(&trajectories, &hm.feats)?;
    let solution = maxent::solve(&phi, &hm.mdp, &hm.feats, opts)?;
    Ok(MltResult { trajectories, solution })
}

/// Attack time drawn uniformly from `[0, max_wait]`.
pub fn random_attack(max_wait: f64, seed: u64) -> Result<f64> {
    if !(max_wait >= 0.0 && max_wait.is_finite()) {
        return Err(Error::Config(format!("max wait {max_wait} must be nonnegative")));
    }
    if max_wait == 0.0 {
        return Ok(0.0);
    }
    Ok(ChaCha8Rng::seed_from_u64(seed).random_range(0.0..=max_wait))
}
