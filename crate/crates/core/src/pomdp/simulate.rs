use serde::{Deserialize, Serialize};

use crate::rng::{sample_categorical, stream_rng, streams, StreamRng};
use crate::{Error, Result};

use super::FactoredPomdp;

/// A policy over true states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Deterministic(Vec<usize>),
    Stochastic(Vec<Vec<f64>>),
}

impl Policy {
    pub fn constant(states: usize, action: usize) -> Self {
        Policy::Deterministic(vec![action; states])
    }

    pub fn uniform(states: usize, actions: usize) -> Self {
        Policy::Stochastic(vec![vec![1.0 / actions as f64; actions]; states])
    }

    pub fn check(&self, states: usize, actions: usize) -> Result<()> {
        match self {
            Policy::Deterministic(table) => {
                if table.len() != states {
                    return Err(Error::InvalidPolicy(format!(
                        "table covers {} states, expected {}",
                        table.len(),
                        states
                    )));
                }
                if let Some(a) = table.iter().find(|&&a| a >= actions) {
                    return Err(Error::InvalidPolicy(format!("action {} out of range", a)));
                }
            }
            Policy::Stochastic(rows) => {
                if rows.len() != states || rows.iter().any(|r| r.len() != actions) {
                    return Err(Error::InvalidPolicy(format!(
                        "expected a {} x {} table",
                        states, actions
                    )));
                }
                for (s, row) in rows.iter().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&p| p < 0.0) {
                        return Err(Error::InvalidPolicy(format!("row {} is not a distribution", s)));
                    }
                }
            }
        }
        Ok(())
    }

    /// `π(a|s)`.
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        match self {
            Policy::Deterministic(table) => {
                if table[state] == action {
                    1.0
                } else {
                    0.0
                }
            }
            Policy::Stochastic(rows) => rows[state][action],
        }
    }
}

/// What a controller may look at when choosing an action. Observation-history
/// controllers must only read `observation`.
#[derive(Clone, Copy, Debug)]
pub struct StepView {
    pub t: usize,
    pub state: usize,
    pub noise: usize,
    pub observation: usize,
}

pub trait Controller {
    fn reset(&mut self) {}
    fn act(&mut self, view: &StepView, rng: &mut StreamRng) -> usize;
}

impl Controller for Policy {
    fn act(&mut self, view: &StepView, rng: &mut StreamRng) -> usize {
        match self {
            Policy::Deterministic(table) => table[view.state],
            Policy::Stochastic(rows) => sample_categorical(rng, &rows[view.state]),
        }
    }
}

/// Picks actions uniformly, ignoring everything it sees.
#[derive(Clone, Copy, Debug)]
pub struct UniformController {
    pub actions: usize,
}

impl Controller for UniformController {
    fn act(&mut self, _view: &StepView, rng: &mut StreamRng) -> usize {
        use rand::Rng;
        rng.random_range(0..self.actions)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state: usize,
    pub noise: usize,
    pub observation: usize,
    pub action: usize,
    /// `R[s_t][a_t][s_{t+1}]`
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// `(s_H, z_H)` reached after the last action.
    pub final_latent: (usize, usize),
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn discounted_return(&self, discount: f64) -> f64 {
        let mut g = 0.0;
        let mut weight = 1.0;
        for step in &self.steps {
            g += weight * step.reward;
            weight *= discount;
        }
        g
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpisodeStart {
    /// Draw `(s_0, z_0)` from the POMDP's initial belief.
    Initial,
    Fixed { state: usize, noise: usize },
}

/// Rolls out `horizon` steps. At each step the observation is emitted from the
/// current latent pair before the controller acts.
pub fn sample_episode(
    pomdp: &FactoredPomdp,
    controller: &mut dyn Controller,
    horizon: usize,
    start: EpisodeStart,
    seed: u64,
) -> Result<Episode> {
    if horizon == 0 {
        return Err(Error::ZeroHorizon);
    }
    let sizes = pomdp.sizes;
    let mut rng = stream_rng(seed, streams::EPISODE);
    let (mut s, mut z) = match start {
        EpisodeStart::Initial => pomdp.split_joint(sample_categorical(&mut rng, &pomdp.initial_belief)),
        EpisodeStart::Fixed { state, noise } => {
            if state >= sizes.states || noise >= sizes.noises {
                return Err(Error::InvalidPolicy(format!(
                    "start ({}, {}) outside the latent space",
                    state, noise
                )));
            }
            (state, noise)
        }
    };
    controller.reset();
    let mut steps = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let o = sample_categorical(&mut rng, &pomdp.emission[s][z]);
        let view = StepView {
            t,
            state: s,
            noise: z,
            observation: o,
        };
        let a = controller.act(&view, &mut rng);
        if a >= sizes.actions {
            return Err(Error::InvalidPolicy(format!("controller chose action {} of {}", a, sizes.actions)));
        }
        let s_next = sample_categorical(&mut rng, &pomdp.state_transition[a][s]);
        let z_next = sample_categorical(&mut rng, pomdp.noise_row(a, z, s, s_next));
        steps.push(StepRecord {
            state: s,
            noise: z,
            observation: o,
            action: a,
            reward: pomdp.reward[s][a][s_next],
        });
        s = s_next;
        z = z_next;
    }
    Ok(Episode {
        seed,
        steps,
        final_latent: (s, z),
    })
}

/// Validates a state policy against the POMDP before simulation.
pub fn checked_policy(pomdp: &FactoredPomdp, policy: Policy) -> Result<Policy> {
    policy.check(pomdp.sizes.states, pomdp.sizes.actions)?;
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::{make_fixture, Fixture, STAY};

    #[test]
    fn stay_policy_from_s1_collects_reward_every_step() {
        let p = make_fixture(Fixture::Tb1, 0).unwrap();
        let mut pi = Policy::constant(2, STAY);
        let ep = sample_episode(&p, &mut pi, 3, EpisodeStart::Fixed { state: 1, noise: 0 }, 11).unwrap();
        assert_eq!(ep.len(), 3);
        assert!(ep.steps.iter().all(|st| st.state == 1 && st.reward == 1.0));
        assert!(ep.steps.iter().all(|st| st.observation == 2 + st.noise));
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let p = make_fixture(Fixture::Tb1, 0).unwrap();
        let mut pi = Policy::constant(2, STAY);
        assert!(matches!(
            sample_episode(&p, &mut pi, 0, EpisodeStart::Initial, 0),
            Err(Error::ZeroHorizon)
        ));
    }

    #[test]
    fn bad_policy_arity_is_rejected() {
        let p = make_fixture(Fixture::Tb1, 0).unwrap();
        assert!(checked_policy(&p, Policy::Deterministic(vec![0, 0, 0])).is_err());
        assert!(checked_policy(&p, Policy::Deterministic(vec![0, 2])).is_err());
        let mut bad = Policy::Deterministic(vec![5, 5]);
        assert!(sample_episode(&p, &mut bad, 2, EpisodeStart::Initial, 0).is_err());
    }

    #[test]
    fn noise_stay_frequency_matches_table() {
        let p = make_fixture(Fixture::Tb1, 0).unwrap();
        let mut pi = Policy::constant(2, STAY);
        let ep = sample_episode(&p, &mut pi, 100_000, EpisodeStart::Initial, 0).unwrap();
        let mut stays = 0usize;
        for w in ep.steps.windows(2) {
            if w[0].noise == w[1].noise {
                stays += 1;
            }
        }
        let freq = stays as f64 / (ep.len() - 1) as f64;
        assert!((freq - 0.8).abs() < 0.01, "{}", freq);
    }

    #[test]
    fn episodes_are_deterministic_in_seed() {
        let p = make_fixture(Fixture::GridNoise, 3).unwrap();
        let mut u = UniformController { actions: 2 };
        let a = sample_episode(&p, &mut u, 50, EpisodeStart::Initial, 9).unwrap();
        let b = sample_episode(&p, &mut u, 50, EpisodeStart::Initial, 9).unwrap();
        assert_eq!(a, b);
    }
}
