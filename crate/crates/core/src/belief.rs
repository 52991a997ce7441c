//! Exact Bayes filtering over the latent pair `(s, z)`, the state/noise belief
//! factorisation, belief-space rewards and the reachable belief-MDP.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::pomdp::FactoredPomdp;
use crate::solver::ValueFunction;
use crate::{Error, Result};

/// Normalisers at or below this are treated as impossible observations.
pub const MIN_NORMALIZER: f64 = 1e-300;
/// Quantisation for instances with a bijective emission.
pub const DEFAULT_QUANTIZATION_EXACT: f64 = 1e-6;
/// Quantisation for noisy emissions.
pub const DEFAULT_QUANTIZATION_NOISY: f64 = 1e-4;
pub const DEFAULT_NODE_CAP: usize = 100_000;

/// Joint belief over `(s, z)` with its marginal/conditional split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactoredBelief {
    pub states: usize,
    pub noises: usize,
    /// `b(s, z)`, indexed `s · |Z| + z`.
    pub joint: Vec<f64>,
    /// `b(s)`
    pub state_marginal: Vec<f64>,
    /// `b(z | s)`; uniform where `b(s) = 0`.
    pub noise_conditional: Vec<Vec<f64>>,
    /// States whose marginal is zero, so the conditional row carries no information.
    pub degenerate: Vec<bool>,
}

impl FactoredBelief {
    pub fn point(states: usize, noises: usize, state: usize, noise: usize) -> Self {
        let mut joint = vec![0.0; states * noises];
        joint[state * noises + noise] = 1.0;
        factorize_belief(&joint, states, noises)
    }

    pub fn initial(p: &FactoredPomdp) -> Self {
        factorize_belief(&p.initial_belief, p.sizes.states, p.sizes.noises)
    }

    /// Rebuilds the joint from the (possibly edited) marginal and conditional.
    pub fn recompose(&self) -> Vec<f64> {
        let mut joint = vec![0.0; self.states * self.noises];
        for s in 0..self.states {
            for z in 0..self.noises {
                joint[s * self.noises + z] = self.state_marginal[s] * self.noise_conditional[s][z];
            }
        }
        joint
    }

    pub fn total_variation(&self, other: &FactoredBelief) -> f64 {
        total_variation(&self.joint, &other.joint)
    }
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Splits a joint belief into `b(s)` and `b(z | s)`.
pub fn factorize_belief(joint: &[f64], states: usize, noises: usize) -> FactoredBelief {
    let mut state_marginal = vec![0.0; states];
    let mut noise_conditional = vec![vec![1.0 / noises as f64; noises]; states];
    let mut degenerate = vec![false; states];
    for s in 0..states {
        let row = &joint[s * noises..(s + 1) * noises];
        let mass: f64 = row.iter().sum();
        state_marginal[s] = mass;
        if mass > 0.0 {
            noise_conditional[s] = row.iter().map(|x| x / mass).collect();
        } else {
            degenerate[s] = true;
        }
    }
    FactoredBelief {
        states,
        noises,
        joint: joint.to_vec(),
        state_marginal,
        noise_conditional,
        degenerate,
    }
}

/// Predictive joint `Σ_{s,z} b(s,z) p(s',z' | a, s, z)`.
pub fn predict(p: &FactoredPomdp, joint: &[f64], action: usize) -> Vec<f64> {
    let (ns, nz) = (p.sizes.states, p.sizes.noises);
    let mut out = vec![0.0; ns * nz];
    for s in 0..ns {
        for z in 0..nz {
            let w = joint[s * nz + z];
            if w == 0.0 {
                continue;
            }
            for s2 in 0..ns {
                let ts = p.state_transition[action][s][s2];
                if ts == 0.0 {
                    continue;
                }
                let row = p.noise_row(action, z, s, s2);
                for (z2, &nzp) in row.iter().enumerate() {
                    out[s2 * nz + z2] += w * ts * nzp;
                }
            }
        }
    }
    out
}

/// Conditions a joint on an observation; returns the posterior joint and `p(o)`.
fn condition_joint(p: &FactoredPomdp, joint: &[f64], action: usize, observation: usize) -> Result<(Vec<f64>, f64)> {
    let nz = p.sizes.noises;
    let mut post: Vec<f64> = joint
        .iter()
        .enumerate()
        .map(|(i, w)| w * p.emission[i / nz][i % nz][observation])
        .collect();
    let norm: f64 = post.iter().sum();
    if norm <= MIN_NORMALIZER {
        return Err(Error::ZeroProbabilityObservation {
            action,
            observation,
            normalizer: norm,
        });
    }
    for x in &mut post {
        *x /= norm;
    }
    Ok((post, norm))
}

/// Bayes update of a belief on an observation with no preceding action, as for the
/// first observation of an episode. The reported action in errors is `usize::MAX`.
pub fn condition_on_observation(p: &FactoredPomdp, b: &FactoredBelief, observation: usize) -> Result<(FactoredBelief, f64)> {
    let (post, norm) = condition_joint(p, &b.joint, usize::MAX, observation)?;
    Ok((factorize_belief(&post, p.sizes.states, p.sizes.noises), norm))
}

/// Predict with `action`, then condition on `observation`. The second value is
/// `p(o | a, b)`.
pub fn belief_update(p: &FactoredPomdp, b: &FactoredBelief, action: usize, observation: usize) -> Result<(FactoredBelief, f64)> {
    let pred = predict(p, &b.joint, action);
    let (post, norm) = condition_joint(p, &pred, action, observation)?;
    Ok((factorize_belief(&post, p.sizes.states, p.sizes.noises), norm))
}

/// `Σ_{s,s'} R(s,a,s') b_t(s) b_{t+1}(s')`; reads state marginals only.
pub fn belief_reward(p: &FactoredPomdp, b: &FactoredBelief, action: usize, next: &FactoredBelief) -> f64 {
    marginal_reward(p, &b.state_marginal, action, &next.state_marginal)
}

fn marginal_reward(p: &FactoredPomdp, bs: &[f64], action: usize, next: &[f64]) -> f64 {
    let mut total = 0.0;
    for (s, &w) in bs.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (s2, &w2) in next.iter().enumerate() {
            total += p.reward[s][action][s2] * w * w2;
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefMdpConfig {
    pub horizon_cap: usize,
    pub quantization: f64,
    pub node_cap: usize,
}

impl BeliefMdpConfig {
    /// Default quantisation for the instance: fine for bijective emissions, coarse otherwise.
    pub fn for_pomdp(p: &FactoredPomdp, horizon_cap: usize) -> Self {
        BeliefMdpConfig {
            horizon_cap,
            quantization: if p.invertible {
                DEFAULT_QUANTIZATION_EXACT
            } else {
                DEFAULT_QUANTIZATION_NOISY
            },
            node_cap: DEFAULT_NODE_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefNode {
    /// First exact belief that landed on this key.
    pub belief: FactoredBelief,
    pub depth: usize,
    /// Leaves at the horizon cap have no outgoing edges and value 0.
    pub expanded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefEdge {
    pub observation: usize,
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StartEdge {
    pub observation: usize,
    pub node: usize,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefMdp {
    pub actions: usize,
    pub discount: f64,
    pub config: BeliefMdpConfig,
    pub reward_bound: f64,
    pub nodes: Vec<BeliefNode>,
    /// `edges[node][action]`; empty for leaves.
    pub edges: Vec<Vec<Vec<BeliefEdge>>>,
    /// The prior, before any observation.
    pub initial: usize,
    /// The prior conditioned on each possible first observation.
    pub start: Vec<StartEdge>,
}

impl BeliefMdp {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `γ^cap · Rmax / (1 − γ)`, the truncation bias of [`belief_value`].
    pub fn truncation_bound(&self) -> f64 {
        self.discount.powi(self.config.horizon_cap as i32) * self.reward_bound / (1.0 - self.discount)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }
}

fn quantize_key(joint: &[f64], q: f64) -> Vec<i64> {
    joint.iter().map(|x| (x / q).round() as i64).collect()
}

struct Builder<'a> {
    p: &'a FactoredPomdp,
    config: BeliefMdpConfig,
    index: HashMap<Vec<i64>, usize>,
    nodes: Vec<BeliefNode>,
    queue: VecDeque<usize>,
}

impl Builder<'_> {
    fn intern(&mut self, belief: FactoredBelief, depth: usize) -> Result<usize> {
        let key = quantize_key(&belief.joint, self.config.quantization);
        if let Some(&id) = self.index.get(&key) {
            return Ok(id);
        }
        if self.nodes.len() >= self.config.node_cap {
            return Err(Error::NodeOverflow {
                cap: self.config.node_cap,
                depth,
            });
        }
        let id = self.nodes.len();
        self.index.insert(key, id);
        self.nodes.push(BeliefNode {
            belief,
            depth,
            expanded: false,
        });
        if depth < self.config.horizon_cap {
            self.queue.push_back(id);
        }
        Ok(id)
    }
}

/// Breadth-first expansion of the beliefs reachable from the prior, merging beliefs
/// whose joints round to the same multiple of `quantization`.
pub fn build_belief_mdp(p: &FactoredPomdp, config: BeliefMdpConfig) -> Result<BeliefMdp> {
    if config.horizon_cap == 0 {
        return Err(Error::ZeroHorizon);
    }
    if config.quantization <= 0.0 || !config.quantization.is_finite() {
        return Err(Error::InvalidPomdp(format!("quantization must be positive, got {}", config.quantization)));
    }
    // γ = 0 is allowed here: the belief-MDP is still well defined.
    let mut report = p.validate();
    report
        .violations
        .retain(|v| !matches!(v, crate::pomdp::Violation::Discount(g) if *g == 0.0));
    report.into_result()?;
    let (nz, na, no) = (p.sizes.noises, p.sizes.actions, p.sizes.observations);
    let mut b = Builder {
        p,
        config,
        index: HashMap::new(),
        nodes: Vec::new(),
        queue: VecDeque::new(),
    };
    let initial = b.intern(FactoredBelief::initial(p), 0)?;

    let mut start = Vec::new();
    let prior = b.nodes[initial].belief.clone();
    for o in 0..no {
        let norm: f64 = prior
            .joint
            .iter()
            .enumerate()
            .map(|(i, w)| w * p.emission[i / nz][i % nz][o])
            .sum();
        if norm <= MIN_NORMALIZER {
            continue;
        }
        let (post, prob) = condition_on_observation(p, &prior, o)?;
        let node = b.intern(post, 1)?;
        start.push(StartEdge { observation: o, node, prob });
    }

    let mut edges: Vec<Vec<Vec<BeliefEdge>>> = Vec::new();
    while let Some(id) = b.queue.pop_front() {
        let current = b.nodes[id].belief.clone();
        let depth = b.nodes[id].depth;
        let mut per_action = Vec::with_capacity(na);
        for a in 0..na {
            let pred = predict(b.p, &current.joint, a);
            let mut out = Vec::new();
            for o in 0..no {
                let norm: f64 = pred
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * p.emission[i / nz][i % nz][o])
                    .sum();
                if norm <= MIN_NORMALIZER {
                    continue;
                }
                let (post, prob) = belief_update(p, &current, a, o)?;
                let reward = belief_reward(p, &current, a, &post);
                let next = b.intern(post, depth + 1)?;
                out.push(BeliefEdge {
                    observation: o,
                    next,
                    prob,
                    reward,
                });
            }
            per_action.push(out);
        }
        if edges.len() <= id {
            edges.resize(id + 1, Vec::new());
        }
        edges[id] = per_action;
        b.nodes[id].expanded = true;
    }
    edges.resize(b.nodes.len(), Vec::new());

    Ok(BeliefMdp {
        actions: na,
        discount: p.discount,
        config,
        reward_bound: p.reward_bound(),
        nodes: b.nodes,
        edges,
        initial,
        start,
    })
}

fn node_q(bmdp: &BeliefMdp, values: &[f64], node: usize, action: usize) -> f64 {
    bmdp.edges[node][action]
        .iter()
        .map(|e| e.prob * (e.reward + bmdp.discount * values[e.next]))
        .sum()
}

/// Optimal values of the quantised belief-MDP, with unexpanded leaves valued at 0.
pub fn belief_value(bmdp: &BeliefMdp, tol: f64) -> Result<ValueFunction> {
    if tol <= 0.0 {
        return Err(Error::InvalidMdp("tolerance must be positive".into()));
    }
    let n = bmdp.len();
    let backup = |v: &[f64], out: &mut [f64]| {
        for (id, slot) in out.iter_mut().enumerate() {
            *slot = if bmdp.nodes[id].expanded {
                (0..bmdp.actions)
                    .map(|a| node_q(bmdp, v, id, a))
                    .fold(f64::NEG_INFINITY, f64::max)
            } else {
                0.0
            };
        }
    };
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    loop {
        backup(&v, &mut next);
        let delta = v.iter().zip(&next).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        std::mem::swap(&mut v, &mut next);
        if delta <= tol {
            break;
        }
    }
    backup(&v, &mut next);
    let residual = v.iter().zip(&next).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(ValueFunction { values: v, residual })
}

/// Greedy action at a node, lowest index on ties.
pub fn belief_greedy_action(bmdp: &BeliefMdp, values: &[f64], node: usize) -> usize {
    let q: Vec<f64> = (0..bmdp.actions).map(|a| node_q(bmdp, values, node, a)).collect();
    let best = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    q.iter().position(|&x| x >= best - 1e-12 * best.abs().max(1.0)).unwrap_or(0)
}

/// Expected value once the first observation has been seen: `Σ_o p(o) V(start(o))`.
/// This is the optimum achievable by a controller that acts on observation histories.
pub fn observed_start_value(bmdp: &BeliefMdp, values: &[f64]) -> f64 {
    bmdp.start.iter().map(|e| e.prob * values[e.node]).sum()
}
