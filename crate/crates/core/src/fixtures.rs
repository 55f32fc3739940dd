//! Small hand-checkable instances shared by unit and integration tests.
//!
//! The two-state chain has actions `toggle` (move to the other state) and
//! `stay`; each succeeds with probability `1 - slip`. Its features are
//! "took the toggle action" and "is in state 1".

use crate::em::HiddenMdp;
use crate::maxent::Trajectory;
use crate::mdp::{FeatureSet, Mdp};
use crate::obs::{MotionSegment, ObservationKind, ObservationModel, ObservationSequence, PairGeometry, Point};
use crate::world::{generate_observations, Sampling};

/// Ground-truth weights for [`two_state_features`].
pub const TINY_THETA: [f64; 2] = [1.0, -1.0];

/// Listener position for the tiny sound fixture, off the bisector of the
/// two cells so every pair has a distinct curve.
pub const TINY_LISTENER: Point = Point::new(-1.0, 1.0);

pub fn two_state_chain(slip: f64, horizon: usize, discount: f64) -> Mdp {
    let dense = [
        // state 0: toggle, stay
        slip,
        1.0 - slip,
        1.0 - slip,
        slip,
        // state 1: toggle, stay
        1.0 - slip,
        slip,
        slip,
        1.0 - slip,
    ];
    Mdp::from_dense(
        2,
        vec!["toggle".into(), "stay".into()],
        &dense,
        vec![0.5, 0.5],
        horizon,
        discount,
    )
    .expect("valid chain")
}

/// Reward 1 in state 1 for either action.
pub fn state_one_reward(mdp: &Mdp) -> Vec<f64> {
    (0..mdp.n_pairs())
        .map(|p| if p / mdp.n_actions() == 1 { 1.0 } else { 0.0 })
        .collect()
}

pub fn two_state_features(mdp: &Mdp) -> FeatureSet {
    FeatureSet::from_fn(mdp, 2, |s, a| vec![a == 0, s == 1]).expect("valid features")
}

/// Cell 0 at the origin and cell 1 one meter east; toggling walks to the
/// other cell during the epoch, staying is stationary.
pub fn tiny_geometry() -> PairGeometry {
    let c0 = Point::new(0.0, 0.0);
    let c1 = Point::new(1.0, 0.0);
    let moving = |from: Point, to: Point| MotionSegment {
        p0: from,
        v: to - from,
        t0: 0.0,
        duration: 1.0,
    };
    PairGeometry {
        n_actions: 2,
        segments: vec![
            moving(c0, c1),
            MotionSegment::stationary(c0, 1.0),
            moving(c1, c0),
            MotionSegment::stationary(c1, 1.0),
        ],
        positions: vec![c0, c1],
        neighbor_radius: 1.0,
    }
}

/// Chain with slip 0.1, `L = 2`, observed through `kind`. Only state 0 is
/// in the learner's view.
pub fn tiny_hidden(kind: ObservationKind, sigma: f64) -> HiddenMdp {
    let mdp = two_state_chain(0.1, 2, 0.9);
    let feats = two_state_features(&mdp);
    let obs = ObservationModel::new(kind, TINY_LISTENER, sigma, 1.0, &tiny_geometry(), vec![true, false])
        .expect("valid model");
    HiddenMdp::new(mdp, feats, obs).expect("consistent fixture")
}

/// Perfect vision of every state: the posterior collapses onto the truth.
pub fn tiny_delta(hm: &HiddenMdp) -> HiddenMdp {
    let obs = hm
        .obs
        .clone()
        .with_kind(ObservationKind::VisionOnly)
        .with_view_region(vec![true; hm.mdp.n_states()])
        .and_then(|o| o.with_vision_accuracy(1.0))
        .expect("valid model");
    hm.with_obs(obs).expect("consistent fixture")
}

/// Vision that never sees anything: every likelihood is uniform.
pub fn tiny_uniform(hm: &HiddenMdp) -> HiddenMdp {
    let obs = hm
        .obs
        .clone()
        .with_kind(ObservationKind::VisionOnly)
        .with_view_region(vec![false; hm.mdp.n_states()])
        .expect("valid model");
    hm.with_obs(obs).expect("consistent fixture")
}

/// Observations of `traj` sampled at 20 Hz over the full epoch.
pub fn tiny_observations(hm: &HiddenMdp, traj: &Trajectory, noise: f64, seed: u64) -> ObservationSequence {
    let sampling = Sampling {
        samples_per_second: 20.0,
        window_min_fraction: 1.0,
        intensity_ceiling: 1e6,
    };
    generate_observations(traj, &hm.obs, &sampling, noise, seed)
        .expect("valid trajectory")
        .omega
}
