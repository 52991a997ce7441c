//! Tabular variational world model with separate state and noise dynamics.
//!
//! Codes are categorical: `ŝ ∈ 0..K_s` carries the controllable dynamics and the
//! reward, `ẑ ∈ 0..K_z` the distractor. The posterior is filtered exactly over the
//! joint code, so the ELBO and its gradient are computed without sampling.

mod latent;
mod model;
mod objective;
mod train;

pub use latent::{asymmetry_test, extract_latent_mdp, AsymmetryReport, LatentController};
pub(crate) use latent::argmax;
pub use model::{
    init_model, EmissionMode, LearnedWorldModel, ModelShape, Params, Table, DEFAULT_ALPHA, DEFAULT_BETA, SHARP_LOGIT,
};
pub use objective::{
    channel1_log_likelihood, elbo, elbo_gradients, filter_posterior, CodeFilter, KlOrder, LossBreakdown,
    ObjectiveSwitches,
};
pub use train::{train, write_loss_curve, LossPoint, TrainingConfig, DIVERGENCE_WINDOW};
