//! Checks that an estimator splits observations into a state part that carries the
//! dynamics and rewards and a noise part that carries nothing the agent needs.

mod belief_check;
mod certify;
mod checks;
mod estimator;
mod search;
mod transport;

pub use belief_check::{check_belief_preservation, BeliefFactorizer};
pub use certify::{
    certify_disentanglement, find_witness, CertificationReport, Certifier, Tolerances, TransitionMode, ValueEquivalence,
    Verdict,
};
pub use checks::{
    check_conditional_independence, check_reward_preservation, check_transition_preservation, CiReport,
    ClassResidual, ObservationModel, RewardFit, TransitionFit,
};
pub use estimator::ObservationEstimator;
pub use search::{search_estimators, FactorizationSummary, SearchResult, SEARCH_LIMIT};
