//! Exact tooling for noisy finite POMDPs whose latent variable splits into a
//! reward-relevant state and a reward-irrelevant noise component.
//!
//! The crate is organised bottom-up:
//!
//! - [`pomdp`]: factored POMDP definitions, fixtures, random instances, simulation, JSON I/O.
//! - [`solver`]: exact policy evaluation, value iteration, bisimulation and redundancy analysis.
//! - [`belief`]: exact Bayes filtering, state/noise belief factorisation, belief-space reward
//!   and reachable belief-MDP construction.
//! - [`identifiability`]: transition/reward preservation checks, conditional-independence
//!   class fitting, witness search and exhaustive estimator search.
//! - [`learner`]: a tabular variational world model with separate state and noise dynamics,
//!   trained on the exact-expectation ELBO with analytic gradients.
//! - [`harness`]: experiment runner, ablation grid, verification suite and report emission.
//!
//! Every stochastic procedure is driven by [`rng::stream_rng`], keyed by `(seed, stream)`,
//! so all results are reproducible bit-for-bit.

pub mod belief;
pub mod error;
pub mod harness;
pub mod identifiability;
pub mod learner;
pub mod pomdp;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
