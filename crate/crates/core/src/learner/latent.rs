use serde::{Deserialize, Serialize};

use crate::pomdp::{Controller, Episode, StepView};
use crate::rng::StreamRng;
use crate::solver::{value_iteration, Mdp, DEFAULT_TOL};
use crate::{Error, Result};

use super::model::LearnedWorldModel;
use super::objective::{channel1_log_likelihood, CodeFilter};

/// Largest change in channel-1 log-likelihood tolerated by the asymmetry test.
const ASYMMETRY_TOL: f64 = 1e-12;

/// The state-code dynamics as an MDP: `softmax(ψ_s)` transitions and `θ_r` rewards.
pub fn extract_latent_mdp(model: &LearnedWorldModel, discount: f64) -> Result<Mdp> {
    model.validate()?;
    let sh = model.shape;
    let prior = model.params.prior_state.softmax();
    let transition = (0..sh.actions)
        .map(|a| (0..sh.state_codes).map(|i| prior.row(sh.prior_state_row(i, a)).to_vec()).collect())
        .collect();
    let reward = (0..sh.state_codes)
        .map(|i| (0..sh.actions).map(|a| model.params.reward.row(sh.prior_state_row(i, a)).to_vec()).collect())
        .collect();
    let mdp = Mdp {
        states: sh.state_codes,
        actions: sh.actions,
        transition,
        reward,
        discount,
    };
    mdp.validate()?;
    Ok(mdp)
}

/// Acts in the true POMDP from observations alone: filters the codes, takes the
/// most likely `ŝ` and plays the latent MDP's greedy action there.
#[derive(Clone, Debug)]
pub struct LatentController {
    filter: CodeFilter,
    policy: Vec<usize>,
    last_action: Option<usize>,
}

impl LatentController {
    /// Plans on the extracted MDP by value iteration.
    pub fn new(model: &LearnedWorldModel, discount: f64) -> Result<Self> {
        let mdp = extract_latent_mdp(model, discount)?;
        let (_, policy) = value_iteration(&mdp, DEFAULT_TOL)?;
        Self::with_policy(model, policy)
    }

    pub fn with_policy(model: &LearnedWorldModel, policy: Vec<usize>) -> Result<Self> {
        if policy.len() != model.shape.state_codes || policy.iter().any(|&a| a >= model.shape.actions) {
            return Err(Error::InvalidPolicy("policy must give an action per state code".into()));
        }
        Ok(LatentController {
            filter: CodeFilter::new(model)?,
            policy,
            last_action: None,
        })
    }

    pub fn policy(&self) -> &[usize] {
        &self.policy
    }

    /// Most likely state and noise codes under the current filter.
    pub fn argmax_codes(&self) -> (usize, usize) {
        let (s, z) = self.filter.marginals();
        (argmax(&s), argmax(&z))
    }

    /// Feeds an observation (after the previous action) and returns the argmax codes.
    pub fn observe(&mut self, o: usize) -> (usize, usize) {
        match self.last_action {
            None => self.filter.start(o),
            Some(a) => self.filter.step(a, o),
        };
        self.argmax_codes()
    }

    /// Records an action chosen by someone else, for use by `observe`.
    pub fn record_action(&mut self, a: usize) {
        self.last_action = Some(a);
    }
}

/// Lowest index among the maxima.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Controller for LatentController {
    fn reset(&mut self) {
        self.last_action = None;
    }

    fn act(&mut self, view: &StepView, _rng: &mut StreamRng) -> usize {
        let (code, _) = self.observe(view.observation);
        let a = self.policy[code];
        self.last_action = Some(a);
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryReport {
    pub permutations_tested: usize,
    /// Largest change in the per-step channel-1 log-likelihood.
    pub max_change: f64,
    pub passed: bool,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Permutes the `ẑ` input of the channel-1 decoder and measures the change in
/// channel-1 reconstruction. Every permutation is tried up to `K_z = 6`; beyond
/// that, cyclic shifts.
pub fn asymmetry_test(model: &LearnedWorldModel, episodes: &[Episode]) -> Result<AsymmetryReport> {
    let kz = model.shape.noise_codes;
    let identity: Vec<usize> = (0..kz).collect();
    let base = channel1_log_likelihood(model, episodes, &identity)?;
    let perms = if kz <= 6 {
        permutations(kz)
    } else {
        (1..kz).map(|s| (0..kz).map(|k| (k + s) % kz).collect()).collect()
    };
    let mut max_change = 0.0_f64;
    let mut tested = 0;
    for p in perms.into_iter().filter(|p| *p != identity) {
        max_change = max_change.max((channel1_log_likelihood(model, episodes, &p)? - base).abs());
        tested += 1;
    }
    Ok(AsymmetryReport {
        permutations_tested: tested,
        max_change,
        passed: max_change <= ASYMMETRY_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identifiability::find_witness;
    use crate::learner::model::{init_model, ModelShape};
    use crate::learner::EmissionMode;
    use crate::pomdp::{make_fixture, sample_episode, EpisodeStart, Fixture, UniformController};

    fn tb1_data(count: u64, len: usize) -> (crate::pomdp::FactoredPomdp, Vec<Episode>) {
        let p = make_fixture(Fixture::Tb1, 0).unwrap();
        let mut c = UniformController { actions: p.sizes.actions };
        let eps = (0..count)
            .map(|s| sample_episode(&p, &mut c, len, EpisodeStart::Initial, 40 + s).unwrap())
            .collect();
        (p, eps)
    }

    #[test]
    fn ground_truth_latent_mdp_matches_the_world() {
        let (p, _) = tb1_data(1, 1);
        let m = LearnedWorldModel::tb1_ground_truth(&p).unwrap();
        let latent = extract_latent_mdp(&m, p.discount).unwrap();
        let (gap, f) = find_witness(&latent, &p.underlying_mdp()).unwrap();
        assert!(gap < 1e-9, "gap {}", gap);
        assert_eq!(f, (0..p.sizes.states).collect::<Vec<_>>());
    }

    #[test]
    fn controller_tracks_the_true_state() {
        let (p, eps) = tb1_data(5, 12);
        let m = LearnedWorldModel::tb1_ground_truth(&p).unwrap();
        let mut c = LatentController::new(&m, p.discount).unwrap();
        for e in &eps {
            c.reset();
            for step in &e.steps {
                let (s, z) = c.observe(step.observation);
                assert_eq!((s, z), (step.state, step.noise));
                c.record_action(step.action);
            }
        }
    }

    #[test]
    fn asymmetry_holds_only_for_the_asymmetric_decoder() {
        let (p, eps) = tb1_data(4, 6);
        let m = LearnedWorldModel::tb1_ground_truth(&p).unwrap();
        let r = asymmetry_test(&m, &eps).unwrap();
        assert_eq!(r.permutations_tested, 1);
        assert!(r.passed && r.max_change == 0.0);

        let shape = ModelShape::for_pomdp(&p, 2, 3, EmissionMode::Symmetric);
        let mut m = init_model(shape, 3).unwrap();
        for (i, x) in m.params.decoder_state.values.iter_mut().enumerate() {
            *x = (i % 7) as f64 * 0.3;
        }
        let r = asymmetry_test(&m, &eps).unwrap();
        assert_eq!(r.permutations_tested, 5);
        assert!(!r.passed && r.max_change > 1e-6);
    }

    #[test]
    fn bad_policies_and_ties() {
        let (p, _) = tb1_data(1, 1);
        let m = LearnedWorldModel::tb1_ground_truth(&p).unwrap();
        assert!(LatentController::with_policy(&m, vec![0]).is_err());
        assert!(LatentController::with_policy(&m, vec![0, 9, 0, 0]).is_err());
        assert_eq!(argmax(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(permutations(4).len(), 24);
    }
}
