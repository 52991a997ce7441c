use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::rng::{dirichlet_ones, stream_rng, streams};
use crate::{Error, Result};

use super::{Channels, FactoredPomdp, NoiseClass, NoiseTransition, Sizes};

/// TB1/TB2 action indices.
pub const STAY: usize = 0;
pub const FLIP: usize = 1;
/// GRIDNOISE action indices.
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Fixture {
    /// Two states, two noise values, bijective emission `o = 2s + z`.
    Tb1,
    /// TB1 dynamics seen through two independently corrupted binary channels,
    /// with noise that depends on the next state.
    Tb2,
    /// Four-cell line world with a three-symbol drifting distractor.
    GridNoise,
}

impl Fixture {
    pub fn name(&self) -> &'static str {
        match self {
            Fixture::Tb1 => "TB1",
            Fixture::Tb2 => "TB2",
            Fixture::GridNoise => "GRIDNOISE",
        }
    }
}

impl fmt::Display for Fixture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fixture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TB1" => Ok(Fixture::Tb1),
            "TB2" => Ok(Fixture::Tb2),
            "GRIDNOISE" => Ok(Fixture::GridNoise),
            _ => Err(Error::UnknownFixture(s.to_string())),
        }
    }
}

/// Builds a named fixture. Only GRIDNOISE uses the seed (for its distractor drift).
pub fn make_fixture(fixture: Fixture, seed: u64) -> Result<FactoredPomdp> {
    let p = match fixture {
        Fixture::Tb1 => tb1(),
        Fixture::Tb2 => tb2(),
        Fixture::GridNoise => gridnoise(seed),
    };
    debug_assert!(p.validate().is_valid());
    Ok(p)
}

fn flip_dynamics() -> Vec<Vec<Vec<f64>>> {
    vec![
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![0.0, 1.0], vec![1.0, 0.0]],
    ]
}

fn reward_on_arrival(states: usize, actions: usize, target: usize) -> Vec<Vec<Vec<f64>>> {
    (0..states)
        .map(|_| {
            (0..actions)
                .map(|_| (0..states).map(|s2| if s2 == target { 1.0 } else { 0.0 }).collect())
                .collect()
        })
        .collect()
}

fn tb1() -> FactoredPomdp {
    let sizes = Sizes::new(2, 2, 2, 4);
    let emission = (0..2)
        .map(|s| {
            (0..2)
                .map(|z| {
                    let mut row = vec![0.0; 4];
                    row[2 * s + z] = 1.0;
                    row
                })
                .collect()
        })
        .collect();
    FactoredPomdp {
        sizes,
        state_transition: flip_dynamics(),
        noise_transition: NoiseTransition {
            class: NoiseClass::A,
            rows: vec![vec![0.8, 0.2], vec![0.2, 0.8]],
        },
        emission,
        reward: reward_on_arrival(2, 2, 1),
        discount: 0.9,
        initial_belief: vec![0.25; 4],
        invertible: true,
        channels: Some(Channels {
            state_symbols: 2,
            noise_symbols: 2,
        }),
    }
}

/// TB1 with the noise removed: `|Z| = 1` and `o = s`.
pub fn tb1_noiseless() -> FactoredPomdp {
    FactoredPomdp {
        sizes: Sizes::new(2, 1, 2, 2),
        state_transition: flip_dynamics(),
        noise_transition: NoiseTransition {
            class: NoiseClass::A,
            rows: vec![vec![1.0]],
        },
        emission: vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
        reward: reward_on_arrival(2, 2, 1),
        discount: 0.9,
        initial_belief: vec![0.5, 0.5],
        invertible: true,
        channels: Some(Channels {
            state_symbols: 2,
            noise_symbols: 1,
        }),
    }
}

fn tb2() -> FactoredPomdp {
    let sizes = Sizes::new(2, 2, 2, 4);
    let channel = |truth: usize, symbol: usize| if truth == symbol { 0.9 } else { 0.1 };
    let emission = (0..2)
        .map(|s| {
            (0..2)
                .map(|z| {
                    (0..4)
                        .map(|o| channel(s, o / 2) * channel(z, o % 2))
                        .collect()
                })
                .collect()
        })
        .collect();
    // Class D rows are ordered [a][z][s'].
    let mut rows = Vec::new();
    for _a in 0..2 {
        for z in 0..2 {
            for s_next in 0..2 {
                let keep = if s_next == 0 { 0.9 } else { 0.6 };
                let mut row = vec![1.0 - keep; 2];
                row[z] = keep;
                rows.push(row);
            }
        }
    }
    FactoredPomdp {
        sizes,
        state_transition: flip_dynamics(),
        noise_transition: NoiseTransition {
            class: NoiseClass::D,
            rows,
        },
        emission,
        reward: reward_on_arrival(2, 2, 1),
        discount: 0.9,
        initial_belief: vec![0.25; 4],
        invertible: false,
        channels: Some(Channels {
            state_symbols: 2,
            noise_symbols: 2,
        }),
    }
}

fn gridnoise(seed: u64) -> FactoredPomdp {
    const CELLS: usize = 4;
    const DISTRACTORS: usize = 3;
    let sizes = Sizes::new(CELLS, DISTRACTORS, 2, CELLS * DISTRACTORS);

    let mut state_transition = vec![vec![vec![0.0; CELLS]; CELLS]; 2];
    for s in 0..CELLS {
        let left = s.saturating_sub(1);
        let right = (s + 1).min(CELLS - 1);
        state_transition[LEFT][s][left] += 0.9;
        state_transition[LEFT][s][s] += 0.1;
        state_transition[RIGHT][s][right] += 0.9;
        state_transition[RIGHT][s][s] += 0.1;
    }

    // Drift: mostly persistent, with a seeded random jump distribution.
    let mut rng = stream_rng(seed, streams::FIXTURE);
    let rows = (0..DISTRACTORS)
        .map(|z| {
            let jump = dirichlet_ones(&mut rng, DISTRACTORS);
            let mut row: Vec<f64> = jump.iter().map(|p| 0.4 * p).collect();
            row[z] += 0.6;
            let total: f64 = row.iter().sum();
            row.iter().map(|p| p / total).collect()
        })
        .collect();

    let emission = (0..CELLS)
        .map(|s| {
            (0..DISTRACTORS)
                .map(|z| {
                    let mut row = vec![0.0; CELLS * DISTRACTORS];
                    row[s * DISTRACTORS + z] = 1.0;
                    row
                })
                .collect()
        })
        .collect();

    FactoredPomdp {
        sizes,
        state_transition,
        noise_transition: NoiseTransition {
            class: NoiseClass::A,
            rows,
        },
        emission,
        reward: reward_on_arrival(CELLS, 2, CELLS - 1),
        discount: 0.9,
        initial_belief: vec![1.0 / (CELLS * DISTRACTORS) as f64; CELLS * DISTRACTORS],
        invertible: true,
        channels: Some(Channels {
            state_symbols: CELLS,
            noise_symbols: DISTRACTORS,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes() {
        let tb1 = make_fixture(Fixture::Tb1, 5).unwrap();
        assert_eq!(tb1.sizes, Sizes::new(2, 2, 2, 4));
        assert!(tb1.invertible);
        assert_eq!(tb1.emission_inverse().unwrap(), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);

        let tb2 = make_fixture(Fixture::Tb2, 5).unwrap();
        assert_eq!(tb2.sizes.observations, 4);
        assert!(!tb2.invertible);
        assert_eq!(tb2.noise_transition.class, NoiseClass::D);
        assert!(tb2.validate().is_valid());

        let grid = make_fixture(Fixture::GridNoise, 7).unwrap();
        assert_eq!((grid.sizes.states, grid.sizes.noises), (4, 3));
        assert_eq!(grid.noise_transition.class, NoiseClass::A);
        assert!(grid.validate().is_valid());
    }

    #[test]
    fn tb2_channels_are_independent() {
        let tb2 = make_fixture(Fixture::Tb2, 0).unwrap();
        // s = 1, z = 0: channel1 reads 1 w.p. 0.9, channel2 reads 0 w.p. 0.9.
        assert!((tb2.emission[1][0][2] - 0.81).abs() < 1e-15);
        assert!((tb2.emission[1][0][1] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn gridnoise_depends_on_seed_only_through_distractor() {
        let a = make_fixture(Fixture::GridNoise, 1).unwrap();
        let b = make_fixture(Fixture::GridNoise, 2).unwrap();
        assert_eq!(a.state_transition, b.state_transition);
        assert_ne!(a.noise_transition, b.noise_transition);
        assert_eq!(a, make_fixture(Fixture::GridNoise, 1).unwrap());
    }

    #[test]
    fn unknown_fixture_name_is_an_error() {
        assert!(matches!("TB9".parse::<Fixture>(), Err(Error::UnknownFixture(_))));
        assert_eq!("gridnoise".parse::<Fixture>().unwrap(), Fixture::GridNoise);
    }
}
