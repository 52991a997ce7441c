//! Exact dynamic programming on finite MDPs, plus the redundancy analysis that
//! decides whether distinct states can be told apart by their values.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::pomdp::Policy;
use crate::rng::{stream_rng, streams};
use crate::{Error, Result};

/// Bellman tolerance used when callers do not pick one.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Two values closer than this are treated as equal when looking for witnesses.
pub const VALUE_DISTINCT: f64 = 1e-6;
/// Signature tolerance for the exact bisimulation used inside the redundancy check.
pub const BISIM_EPS: f64 = 1e-10;

const ROW_TOL: f64 = 1e-9;
const TIE_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 10_000_000;
const EXHAUSTIVE_POLICY_LIMIT: usize = 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    pub states: usize,
    pub actions: usize,
    /// `T[a][s][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `R[s][a][s']`
    pub reward: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
}

impl Mdp {
    pub fn validate(&self) -> Result<()> {
        if self.states == 0 || self.actions == 0 {
            return Err(Error::InvalidMdp("empty state or action set".into()));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidMdp(format!("discount {} outside [0, 1)", self.discount)));
        }
        if self.transition.len() != self.actions || self.reward.len() != self.states {
            return Err(Error::InvalidMdp("table shapes disagree with sizes".into()));
        }
        for (a, per_action) in self.transition.iter().enumerate() {
            if per_action.len() != self.states {
                return Err(Error::InvalidMdp(format!("transition[{}] has wrong length", a)));
            }
            for (s, row) in per_action.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.len() != self.states || (sum - 1.0).abs() > ROW_TOL || row.iter().any(|&p| p < 0.0) {
                    return Err(Error::InvalidMdp(format!(
                        "transition[{}][{}] is not a distribution (sum {})",
                        a, s, sum
                    )));
                }
            }
        }
        for per_state in &self.reward {
            if per_state.len() != self.actions || per_state.iter().any(|r| r.len() != self.states) {
                return Err(Error::InvalidMdp("reward table has wrong shape".into()));
            }
        }
        Ok(())
    }

    /// `E[R | s, a]`
    pub fn expected_reward(&self, state: usize, action: usize) -> f64 {
        self.transition[action][state]
            .iter()
            .zip(&self.reward[state][action])
            .map(|(p, r)| p * r)
            .sum()
    }

    pub fn q_value(&self, values: &[f64], state: usize, action: usize) -> f64 {
        self.transition[action][state]
            .iter()
            .zip(&self.reward[state][action])
            .zip(values)
            .map(|((p, r), v)| p * (r + self.discount * v))
            .sum()
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward.iter().flatten().flatten().fold(0.0_f64, |m, r| m.max(r.abs()))
    }

    /// Copy of the MDP with state `k` split into two bisimilar copies; the copy is
    /// appended as the last state and incoming mass is shared equally.
    pub fn duplicate_state(&self, k: usize) -> Mdp {
        let n = self.states + 1;
        let transition = self
            .transition
            .iter()
            .map(|per_action| {
                let mut rows: Vec<Vec<f64>> = per_action
                    .iter()
                    .map(|row| {
                        let mut r = row.clone();
                        let half = r[k] * 0.5;
                        r[k] = half;
                        r.push(half);
                        r
                    })
                    .collect();
                rows.push(rows[k].clone());
                rows
            })
            .collect();
        let mut reward: Vec<Vec<Vec<f64>>> = self
            .reward
            .iter()
            .map(|per_state| {
                per_state
                    .iter()
                    .map(|row| {
                        let mut r = row.clone();
                        r.push(row[k]);
                        r
                    })
                    .collect()
            })
            .collect();
        reward.push(reward[k].clone());
        Mdp {
            states: n,
            actions: self.actions,
            transition,
            reward,
            discount: self.discount,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    /// Sup-norm Bellman residual of `values`.
    pub residual: f64,
}

impl ValueFunction {
    /// Writes `state,value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "value"])?;
        for (s, v) in self.values.iter().enumerate() {
            w.write_record([s.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn policy_backup(mdp: &Mdp, policy: &Policy, values: &[f64], out: &mut [f64]) {
    for (s, slot) in out.iter_mut().enumerate() {
        *slot = (0..mdp.actions)
            .map(|a| {
                let w = policy.prob(s, a);
                if w == 0.0 {
                    0.0
                } else {
                    w * mdp.q_value(values, s, a)
                }
            })
            .sum();
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Iterative evaluation of `V^π` to a Bellman residual of at most `tol`.
pub fn policy_evaluation(mdp: &Mdp, policy: &Policy, tol: f64) -> Result<ValueFunction> {
    mdp.validate()?;
    policy.check(mdp.states, mdp.actions)?;
    if tol <= 0.0 {
        return Err(Error::InvalidMdp("tolerance must be positive".into()));
    }
    let mut v = vec![0.0; mdp.states];
    let mut next = vec![0.0; mdp.states];
    for _ in 0..MAX_SWEEPS {
        policy_backup(mdp, policy, &v, &mut next);
        let delta = sup_diff(&v, &next);
        std::mem::swap(&mut v, &mut next);
        if delta <= tol {
            break;
        }
    }
    policy_backup(mdp, policy, &v, &mut next);
    Ok(ValueFunction {
        residual: sup_diff(&v, &next),
        values: v,
    })
}

/// Greedy actions with respect to `values`; ties go to the lowest action index.
pub fn greedy_policy(mdp: &Mdp, values: &[f64]) -> Vec<usize> {
    (0..mdp.states)
        .map(|s| {
            let q: Vec<f64> = (0..mdp.actions).map(|a| mdp.q_value(values, s, a)).collect();
            let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let slack = TIE_TOL * best.abs().max(1.0);
            q.iter().position(|&x| x >= best - slack).unwrap_or(0)
        })
        .collect()
}

/// Optimal values and a greedy optimal policy.
pub fn value_iteration(mdp: &Mdp, tol: f64) -> Result<(ValueFunction, Vec<usize>)> {
    mdp.validate()?;
    if tol <= 0.0 {
        return Err(Error::InvalidMdp("tolerance must be positive".into()));
    }
    let backup = |v: &[f64], out: &mut [f64]| {
        for (s, slot) in out.iter_mut().enumerate() {
            *slot = (0..mdp.actions)
                .map(|a| mdp.q_value(v, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
        }
    };
    let mut v = vec![0.0; mdp.states];
    let mut next = vec![0.0; mdp.states];
    for _ in 0..MAX_SWEEPS {
        backup(&v, &mut next);
        let delta = sup_diff(&v, &next);
        std::mem::swap(&mut v, &mut next);
        if delta <= tol {
            break;
        }
    }
    backup(&v, &mut next);
    let residual = sup_diff(&v, &next);
    let policy = greedy_policy(mdp, &v);
    Ok((ValueFunction { values: v, residual }, policy))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub block_of: Vec<usize>,
    pub block_count: usize,
}

impl Partition {
    pub fn same_block(&self, a: usize, b: usize) -> bool {
        self.block_of[a] == self.block_of[b]
    }

    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.block_count];
        for (s, &b) in self.block_of.iter().enumerate() {
            out[b].push(s);
        }
        out
    }
}

/// Coarsest partition whose blocks agree, for every action, on expected reward and on
/// the probability of moving into each block, up to `eps`.
///
/// Starts from a single block and splits until the block count stops growing. With
/// `eps > 0` states join the first compatible group in index order, so the result
/// is deterministic.
pub fn bisimulation_partition(mdp: &Mdp, eps: f64) -> Partition {
    let n = mdp.states;
    let mut block_of = vec![0usize; n];
    let mut count = 1usize;
    loop {
        let signatures: Vec<Vec<f64>> = (0..n)
            .map(|s| {
                let mut sig = Vec::with_capacity(mdp.actions * (count + 1));
                for a in 0..mdp.actions {
                    sig.push(mdp.expected_reward(s, a));
                    let mut mass = vec![0.0; count];
                    for (s2, &p) in mdp.transition[a][s].iter().enumerate() {
                        mass[block_of[s2]] += p;
                    }
                    sig.extend(mass);
                }
                sig
            })
            .collect();

        let mut representatives: Vec<usize> = Vec::new();
        let mut next = vec![0usize; n];
        for s in 0..n {
            let found = representatives.iter().position(|&r| {
                block_of[r] == block_of[s] && sup_diff(&signatures[r], &signatures[s]) <= eps
            });
            next[s] = match found {
                Some(g) => g,
                None => {
                    representatives.push(s);
                    representatives.len() - 1
                }
            };
        }
        let new_count = representatives.len();
        block_of = next;
        if new_count == count {
            return Partition {
                block_of,
                block_count: count,
            };
        }
        count = new_count;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistinctPair {
    pub pair: (usize, usize),
    /// Deterministic policy under which the two values differ.
    pub witness: Vec<usize>,
    pub gap: f64,
}

/// Three-valued answer to "is every pair of states value-distinguishable?".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RedundancyReport {
    pub distinct: Vec<DistinctPair>,
    /// Pairs that are bisimilar, hence equal under every policy.
    pub redundant: Vec<(usize, usize)>,
    /// Pairs with no witness among the tested policies and no bisimulation proof.
    pub undetermined: Vec<(usize, usize)>,
    pub policies_tested: usize,
    pub exhaustive: bool,
}

impl RedundancyReport {
    pub fn all_distinct(&self) -> bool {
        self.redundant.is_empty() && self.undetermined.is_empty()
    }
}

fn enumerate_policies(states: usize, actions: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..states {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..actions).map(move |a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    out
}

/// Classifies every pair of states as distinct (with a witness policy), redundant
/// (bisimilar) or undetermined.
///
/// All deterministic policies are tried when there are at most 1024 of them;
/// otherwise `n_policies` random deterministic policies plus an optimal one.
pub fn no_redundancy_check(mdp: &Mdp, n_policies: usize, seed: u64) -> Result<RedundancyReport> {
    mdp.validate()?;
    let n = mdp.states;
    let partition = bisimulation_partition(mdp, BISIM_EPS);

    let exhaustive = (mdp.actions as f64).powi(n as i32) <= EXHAUSTIVE_POLICY_LIMIT as f64;
    let policies = if exhaustive {
        enumerate_policies(n, mdp.actions)
    } else {
        let mut rng = stream_rng(seed, streams::POLICY_SAMPLE);
        let mut ps: Vec<Vec<usize>> = (0..n_policies.max(1))
            .map(|_| (0..n).map(|_| rng.random_range(0..mdp.actions)).collect())
            .collect();
        ps.push(value_iteration(mdp, DEFAULT_TOL)?.1);
        ps
    };

    let values: Vec<Vec<f64>> = policies
        .iter()
        .map(|p| policy_evaluation(mdp, &Policy::Deterministic(p.clone()), DEFAULT_TOL).map(|v| v.values))
        .collect::<Result<_>>()?;

    let mut report = RedundancyReport {
        distinct: Vec::new(),
        redundant: Vec::new(),
        undetermined: Vec::new(),
        policies_tested: policies.len(),
        exhaustive,
    };
    for i in 0..n {
        for j in (i + 1)..n {
            if partition.same_block(i, j) {
                report.redundant.push((i, j));
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for (k, v) in values.iter().enumerate() {
                let gap = (v[i] - v[j]).abs();
                if gap > VALUE_DISTINCT && best.is_none_or(|(_, g)| gap > g) {
                    best = Some((k, gap));
                }
            }
            match best {
                Some((k, gap)) => report.distinct.push(DistinctPair {
                    pair: (i, j),
                    witness: policies[k].clone(),
                    gap,
                }),
                None => report.undetermined.push((i, j)),
            }
        }
    }
    Ok(report)
}
