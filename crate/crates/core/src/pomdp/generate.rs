use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{dirichlet_ones, stream_rng, streams};
use crate::solver::no_redundancy_check;
use crate::{Error, Result};

use super::{FactoredPomdp, NoiseClass, NoiseTransition, Sizes};

const MAX_REWARD_ATTEMPTS: usize = 100;
const REDUNDANCY_POLICIES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomInstance {
    pub sizes: Sizes,
    pub class: NoiseClass,
    pub invertible: bool,
    pub seed: u64,
}

/// Random valid POMDP: Dirichlet(1) transition, noise and (non-invertible) emission rows,
/// a random bijective emission when `invertible`, and uniform `[0, 1]` rewards resampled
/// until every pair of states is value-distinguishable.
pub fn generate_random(request: &RandomInstance) -> Result<FactoredPomdp> {
    let sizes = request.sizes;
    if sizes.states == 0 || sizes.noises == 0 || sizes.actions == 0 || sizes.observations == 0 {
        return Err(Error::Sizes(format!("all sizes must be at least 1, got {:?}", sizes)));
    }
    if request.invertible && sizes.observations != sizes.joint() {
        return Err(Error::Sizes(format!(
            "invertible emission needs |O| = |S|·|Z| = {}, got {}",
            sizes.joint(),
            sizes.observations
        )));
    }

    let mut rng = stream_rng(request.seed, streams::GENERATE_TRANSITIONS);
    let state_transition: Vec<Vec<Vec<f64>>> = (0..sizes.actions)
        .map(|_| (0..sizes.states).map(|_| dirichlet_ones(&mut rng, sizes.states)).collect())
        .collect();
    let rows = (0..request.class.row_count(&sizes))
        .map(|_| dirichlet_ones(&mut rng, sizes.noises))
        .collect();
    let emission = if request.invertible {
        let mut labels: Vec<usize> = (0..sizes.observations).collect();
        labels.shuffle(&mut rng);
        (0..sizes.states)
            .map(|s| {
                (0..sizes.noises)
                    .map(|z| {
                        let mut row = vec![0.0; sizes.observations];
                        row[labels[s * sizes.noises + z]] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect()
    } else {
        (0..sizes.states)
            .map(|_| {
                (0..sizes.noises)
                    .map(|_| dirichlet_ones(&mut rng, sizes.observations))
                    .collect()
            })
            .collect()
    };

    let mut pomdp = FactoredPomdp {
        sizes,
        state_transition,
        noise_transition: NoiseTransition {
            class: request.class,
            rows,
        },
        emission,
        reward: Vec::new(),
        discount: 0.9,
        initial_belief: vec![1.0 / sizes.joint() as f64; sizes.joint()],
        invertible: request.invertible,
        channels: None,
    };

    let mut reward_rng = stream_rng(request.seed, streams::GENERATE_REWARDS);
    for _ in 0..MAX_REWARD_ATTEMPTS {
        pomdp.reward = (0..sizes.states)
            .map(|_| {
                (0..sizes.actions)
                    .map(|_| (0..sizes.states).map(|_| reward_rng.random::<f64>()).collect())
                    .collect()
            })
            .collect();
        let report = no_redundancy_check(&pomdp.underlying_mdp(), REDUNDANCY_POLICIES, request.seed)?;
        if report.all_distinct() {
            debug_assert!(pomdp.validate().is_valid());
            return Ok(pomdp);
        }
    }
    Err(Error::RedundancyResampling {
        attempts: MAX_REWARD_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(sizes: Sizes, class: NoiseClass, invertible: bool, seed: u64) -> RandomInstance {
        RandomInstance {
            sizes,
            class,
            invertible,
            seed,
        }
    }

    #[test]
    fn generated_instance_is_valid_and_bijective() {
        let p = generate_random(&request(Sizes::new(2, 2, 2, 4), NoiseClass::A, true, 1)).unwrap();
        assert!(p.validate().is_valid());
        assert!(p.emission_inverse().is_some());
    }

    #[test]
    fn invertible_arity_is_checked() {
        let err = generate_random(&request(Sizes::new(3, 2, 2, 5), NoiseClass::A, true, 1));
        assert!(matches!(err, Err(Error::Sizes(_))));
    }

    #[test]
    fn zero_sizes_are_rejected() {
        assert!(generate_random(&request(Sizes::new(0, 2, 2, 4), NoiseClass::A, false, 1)).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let s = request(Sizes::new(3, 2, 2, 6), NoiseClass::E, true, 42);
        let a = generate_random(&s).unwrap();
        let b = generate_random(&s).unwrap();
        assert_eq!(a, b);
        let c = generate_random(&RandomInstance { seed: 43, ..s }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_class_generates_valid_instances() {
        for class in NoiseClass::ALL {
            for seed in 0..5 {
                let p = generate_random(&request(Sizes::new(3, 2, 2, 5), class, false, seed)).unwrap();
                assert!(p.validate().is_valid(), "{:?} seed {}", class, seed);
            }
        }
    }
}
