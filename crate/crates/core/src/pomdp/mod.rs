//! Finite POMDPs whose latent variable factors into a state `s` and a noise `z`.
//!
//! Joint dynamics always factor as `p(s',z'|a,s,z) = T_s(s'|a,s) · N(z'|…)`, where the
//! noise kernel `N` belongs to one of five conditioning classes (see [`NoiseClass`]).
//! In every class the current noise is conditionally independent of the next state
//! given the current state and action.

pub mod fixtures;
mod generate;
mod io;
mod simulate;

pub use fixtures::{make_fixture, tb1_noiseless, Fixture, FLIP, LEFT, RIGHT, STAY};
pub use generate::{generate_random, RandomInstance};
pub use io::PomdpFile;
pub use simulate::{
    checked_policy, sample_episode, Controller, Episode, EpisodeStart, Policy, StepRecord, StepView,
    UniformController,
};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::solver::Mdp;

/// Tolerance on probability row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sizes {
    pub states: usize,
    pub noises: usize,
    pub actions: usize,
    pub observations: usize,
}

impl Sizes {
    pub fn new(states: usize, noises: usize, actions: usize, observations: usize) -> Self {
        Sizes {
            states,
            noises,
            actions,
            observations,
        }
    }

    pub fn joint(&self) -> usize {
        self.states * self.noises
    }
}

/// How the next noise value is allowed to depend on the rest of the system.
///
/// Ordered from most to least restrictive. `C` and `D` are not nested in each
/// other but both are nested in `E` and both contain `B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NoiseClass {
    /// `p(z'|z)`
    A,
    /// `p(z'|a,z)`
    B,
    /// `p(z'|a,z,s)`
    C,
    /// `p(z'|a,z,s')`
    D,
    /// `p(z'|a,z,s,s')`
    E,
}

impl NoiseClass {
    pub const ALL: [NoiseClass; 5] = [
        NoiseClass::A,
        NoiseClass::B,
        NoiseClass::C,
        NoiseClass::D,
        NoiseClass::E,
    ];

    pub fn kernel(&self) -> &'static str {
        match self {
            NoiseClass::A => "p(z'|z)",
            NoiseClass::B => "p(z'|a,z)",
            NoiseClass::C => "p(z'|a,z,s)",
            NoiseClass::D => "p(z'|a,z,s')",
            NoiseClass::E => "p(z'|a,z,s,s')",
        }
    }

    /// Number of conditioning rows for the given sizes.
    pub fn row_count(&self, sizes: &Sizes) -> usize {
        let (s, z, a) = (sizes.states, sizes.noises, sizes.actions);
        match self {
            NoiseClass::A => z,
            NoiseClass::B => a * z,
            NoiseClass::C | NoiseClass::D => a * z * s,
            NoiseClass::E => a * z * s * s,
        }
    }

    /// Row of the conditioning tuple, in the row-major order
    /// `[z]`, `[a][z]`, `[a][z][s]`, `[a][z][s']`, `[a][z][s][s']`.
    pub fn row_index(
        &self,
        sizes: &Sizes,
        action: usize,
        noise: usize,
        state: usize,
        next_state: usize,
    ) -> usize {
        let (ns, nz) = (sizes.states, sizes.noises);
        match self {
            NoiseClass::A => noise,
            NoiseClass::B => action * nz + noise,
            NoiseClass::C => (action * nz + noise) * ns + state,
            NoiseClass::D => (action * nz + noise) * ns + next_state,
            NoiseClass::E => ((action * nz + noise) * ns + state) * ns + next_state,
        }
    }

    pub fn parse(text: &str) -> Option<NoiseClass> {
        match text.trim().to_ascii_uppercase().as_str() {
            "A" => Some(NoiseClass::A),
            "B" => Some(NoiseClass::B),
            "C" => Some(NoiseClass::C),
            "D" => Some(NoiseClass::D),
            "E" => Some(NoiseClass::E),
            _ => None,
        }
    }
}

impl fmt::Display for NoiseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// Noise kernel: one distribution over `z'` per conditioning row of its class.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseTransition {
    pub class: NoiseClass,
    pub rows: Vec<Vec<f64>>,
}

impl NoiseTransition {
    pub fn row(&self, sizes: &Sizes, action: usize, noise: usize, state: usize, next_state: usize) -> &[f64] {
        &self.rows[self.class.row_index(sizes, action, noise, state, next_state)]
    }
}

/// Split of an observation index into two symbols, `o = c1 · noise_symbols + c2`.
///
/// Channel 1 carries the state-relevant symbol and channel 2 the distractor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channels {
    pub state_symbols: usize,
    pub noise_symbols: usize,
}

impl Channels {
    pub fn split(&self, observation: usize) -> (usize, usize) {
        (observation / self.noise_symbols, observation % self.noise_symbols)
    }

    pub fn join(&self, c1: usize, c2: usize) -> usize {
        c1 * self.noise_symbols + c2
    }

    pub fn observations(&self) -> usize {
        self.state_symbols * self.noise_symbols
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactoredPomdp {
    pub sizes: Sizes,
    /// `T_s[a][s][s']`
    pub state_transition: Vec<Vec<Vec<f64>>>,
    pub noise_transition: NoiseTransition,
    /// `M[s][z][o]`
    pub emission: Vec<Vec<Vec<f64>>>,
    /// `R[s][a][s']`
    pub reward: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
    /// Distribution over `(s, z)`, indexed `s · |Z| + z`.
    pub initial_belief: Vec<f64>,
    pub invertible: bool,
    pub channels: Option<Channels>,
}

impl FactoredPomdp {
    pub fn joint_index(&self, state: usize, noise: usize) -> usize {
        state * self.sizes.noises + noise
    }

    pub fn split_joint(&self, joint: usize) -> (usize, usize) {
        (joint / self.sizes.noises, joint % self.sizes.noises)
    }

    pub fn noise_row(&self, action: usize, noise: usize, state: usize, next_state: usize) -> &[f64] {
        self.noise_transition.row(&self.sizes, action, noise, state, next_state)
    }

    /// `p(s', z' | a, s, z)`.
    pub fn transition_prob(
        &self,
        action: usize,
        state: usize,
        noise: usize,
        next_state: usize,
        next_noise: usize,
    ) -> f64 {
        self.state_transition[action][state][next_state]
            * self.noise_row(action, noise, state, next_state)[next_noise]
    }

    /// Largest absolute reward.
    pub fn reward_bound(&self) -> f64 {
        self.reward
            .iter()
            .flatten()
            .flatten()
            .fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    /// For invertible emissions, the latent pair emitted as each observation.
    pub fn emission_inverse(&self) -> Option<Vec<(usize, usize)>> {
        if !self.invertible {
            return None;
        }
        let mut inverse = vec![None; self.sizes.observations];
        for s in 0..self.sizes.states {
            for z in 0..self.sizes.noises {
                let o = argmax(&self.emission[s][z]);
                if inverse[o].is_some() {
                    return None;
                }
                inverse[o] = Some((s, z));
            }
        }
        inverse.into_iter().collect()
    }

    /// Projection onto `(S, A, T_s, R, γ)`; noise and emission are dropped.
    pub fn underlying_mdp(&self) -> Mdp {
        Mdp {
            states: self.sizes.states,
            actions: self.sizes.actions,
            transition: self.state_transition.clone(),
            reward: self.reward.clone(),
            discount: self.discount,
        }
    }

    /// Reports every violated structural invariant; empty means valid.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let sz = self.sizes;
        if sz.states == 0 || sz.noises == 0 || sz.actions == 0 || sz.observations == 0 {
            report.push(Violation::Shape {
                table: "sizes",
                detail: format!("all sizes must be positive, got {:?}", sz),
            });
            return report;
        }

        if shape3(&self.state_transition, sz.actions, sz.states, sz.states) {
            for (a, per_action) in self.state_transition.iter().enumerate() {
                for (s, row) in per_action.iter().enumerate() {
                    check_row(&mut report, "state_transition", vec![a, s], row);
                }
            }
        } else {
            report.push(Violation::Shape {
                table: "state_transition",
                detail: format!("expected [{}][{}][{}]", sz.actions, sz.states, sz.states),
            });
        }

        let expected_rows = self.noise_transition.class.row_count(&sz);
        if self.noise_transition.rows.len() != expected_rows
            || self.noise_transition.rows.iter().any(|r| r.len() != sz.noises)
        {
            report.push(Violation::Shape {
                table: "noise_transition",
                detail: format!(
                    "class {} needs {} rows of length {}",
                    self.noise_transition.class, expected_rows, sz.noises
                ),
            });
        } else {
            for (i, row) in self.noise_transition.rows.iter().enumerate() {
                check_row(&mut report, "noise_transition", vec![i], row);
            }
        }

        let emission_ok = shape3(&self.emission, sz.states, sz.noises, sz.observations);
        if emission_ok {
            for (s, per_state) in self.emission.iter().enumerate() {
                for (z, row) in per_state.iter().enumerate() {
                    check_row(&mut report, "emission", vec![s, z], row);
                }
            }
        } else {
            report.push(Violation::Shape {
                table: "emission",
                detail: format!("expected [{}][{}][{}]", sz.states, sz.noises, sz.observations),
            });
        }

        if shape3(&self.reward, sz.states, sz.actions, sz.states) {
            for (s, per_state) in self.reward.iter().enumerate() {
                for (a, row) in per_state.iter().enumerate() {
                    for (s2, &r) in row.iter().enumerate() {
                        if !r.is_finite() {
                            report.push(Violation::NonFiniteReward { index: [s, a, s2] });
                        }
                    }
                }
            }
        } else {
            report.push(Violation::Shape {
                table: "reward",
                detail: format!("expected [{}][{}][{}]", sz.states, sz.actions, sz.states),
            });
        }

        if !(self.discount > 0.0 && self.discount < 1.0) {
            report.push(Violation::Discount(self.discount));
        }

        if self.initial_belief.len() != sz.joint() {
            report.push(Violation::Shape {
                table: "initial_belief",
                detail: format!("expected length {}", sz.joint()),
            });
        } else {
            check_row(&mut report, "initial_belief", vec![], &self.initial_belief);
        }

        if let Some(ch) = self.channels {
            if ch.observations() != sz.observations {
                report.push(Violation::Shape {
                    table: "channels",
                    detail: format!(
                        "{} x {} symbols do not cover {} observations",
                        ch.state_symbols, ch.noise_symbols, sz.observations
                    ),
                });
            }
        }

        if self.invertible && emission_ok {
            if sz.observations != sz.joint() {
                report.push(Violation::NotBijective {
                    detail: format!("|O| = {} but |S|·|Z| = {}", sz.observations, sz.joint()),
                });
            }
            let mut hit = vec![false; sz.observations];
            for s in 0..sz.states {
                for z in 0..sz.noises {
                    let row = &self.emission[s][z];
                    let o = argmax(row);
                    if (row[o] - 1.0).abs() > ROW_SUM_TOL {
                        report.push(Violation::NotPointMass { state: s, noise: z });
                    }
                    if hit[o] {
                        report.push(Violation::NotBijective {
                            detail: format!("observation {} emitted by more than one (s, z)", o),
                        });
                    }
                    hit[o] = true;
                }
            }
        }
        report
    }
}

fn shape3(t: &[Vec<Vec<f64>>], a: usize, b: usize, c: usize) -> bool {
    t.len() == a && t.iter().all(|x| x.len() == b && x.iter().all(|y| y.len() == c))
}

fn check_row(report: &mut ValidationReport, table: &'static str, index: Vec<usize>, row: &[f64]) {
    for (j, &p) in row.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            let mut at = index.clone();
            at.push(j);
            report.push(Violation::Entry {
                table,
                index: at,
                value: p,
            });
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        report.push(Violation::RowSum { table, index, sum });
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Shape { table: &'static str, detail: String },
    RowSum { table: &'static str, index: Vec<usize>, sum: f64 },
    Entry { table: &'static str, index: Vec<usize>, value: f64 },
    NonFiniteReward { index: [usize; 3] },
    Discount(f64),
    NotBijective { detail: String },
    NotPointMass { state: usize, noise: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape { table, detail } => write!(f, "{}: bad shape, {}", table, detail),
            Violation::RowSum { table, index, sum } => {
                write!(f, "{}{:?}: row sums to {}", table, index, sum)
            }
            Violation::Entry { table, index, value } => {
                write!(f, "{}{:?}: entry {} outside [0, 1]", table, index, value)
            }
            Violation::NonFiniteReward { index } => write!(f, "reward{:?} is not finite", index),
            Violation::Discount(g) => write!(f, "discount {} outside (0, 1)", g),
            Violation::NotBijective { detail } => write!(f, "emission not a bijection: {}", detail),
            Violation::NotPointMass { state, noise } => {
                write!(f, "emission[{}][{}] is not a point mass", state, noise)
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }

    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> crate::Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let text: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            Err(crate::Error::InvalidPomdp(text.join("; ")))
        }
    }
}
