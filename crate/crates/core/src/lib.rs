//! Reward learning from noisy, continuous-time observations of an expert.
//!
//! * [`mdp`]: finite MDPs, linear feature rewards, planners and the inverse
//!   learning error.
//! * [`maxent`]: maximum-entropy IRL on fully observed trajectories.
//! * [`obs`]: the sound-intensity curve model and per-epoch likelihoods.
//! * [`em`]: expectation-maximization over hidden trajectories.
//! * [`baselines`]: most-likely-trajectory IRL and random attack timing.
//! * [`world`]: the corridor and patrol domains, simulation and penetration
//!   trials.

pub mod baselines;
pub mod em;
pub mod error;
pub mod fixtures;
pub mod maxent;
pub mod mdp;
pub mod obs;
pub mod world;

mod logspace;

pub use error::{Error, Result};
