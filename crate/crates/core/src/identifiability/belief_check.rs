use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::belief::{total_variation, BeliefMdp};
use crate::{Error, Result};

use super::transport::transport_cost;

/// Belief-level estimator: every belief-MDP node gets a state key and a noise key.
///
/// Keys may carry points (one or more probability vectors per key). When both
/// sides have points, two keys are as far apart as their points in total
/// variation, so beliefs that round to neighbouring keys count as close. Without
/// points distinct keys are at distance 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefFactorizer {
    pub state_keys: Vec<usize>,
    pub noise_keys: Vec<usize>,
    /// `state_points[key]`, optional.
    #[serde(default)]
    pub state_points: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub noise_points: Vec<Vec<Vec<f64>>>,
}

fn intern(values: impl Iterator<Item = Vec<i64>>) -> (Vec<usize>, Vec<usize>) {
    let mut ids: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut first = Vec::new();
    let keys = values
        .enumerate()
        .map(|(node, k)| {
            let next = ids.len();
            *ids.entry(k).or_insert_with(|| {
                first.push(node);
                next
            })
        })
        .collect();
    (keys, first)
}

fn quantize(v: &[f64], q: f64) -> Vec<i64> {
    v.iter().map(|x| (x / q).round() as i64).collect()
}

impl BeliefFactorizer {
    /// Unpointed factorizer from explicit keys.
    pub fn from_keys(state_keys: Vec<usize>, noise_keys: Vec<usize>) -> Self {
        BeliefFactorizer {
            state_keys,
            noise_keys,
            state_points: Vec::new(),
            noise_points: Vec::new(),
        }
    }

    /// Keys from the rounded state marginal `b(s)` and noise conditional `b(z | s)`.
    /// Rows of the conditional at zero-marginal states are uninformative and are
    /// left out of the key. Each key's point is the belief of its first node.
    pub fn ground_truth(bmdp: &BeliefMdp) -> Self {
        let q = bmdp.config.quantization;
        let (state_keys, state_first) = intern(bmdp.nodes.iter().map(|n| quantize(&n.belief.state_marginal, q)));
        let (noise_keys, noise_first) = intern(bmdp.nodes.iter().map(|n| {
            let b = &n.belief;
            let mut key = Vec::new();
            for s in 0..b.states {
                if b.degenerate[s] {
                    key.push(i64::MIN);
                } else {
                    key.extend(quantize(&b.noise_conditional[s], q));
                }
            }
            key
        }));
        BeliefFactorizer {
            state_keys,
            noise_keys,
            state_points: state_first
                .iter()
                .map(|&n| vec![bmdp.nodes[n].belief.state_marginal.clone()])
                .collect(),
            noise_points: noise_first.iter().map(|&n| bmdp.nodes[n].belief.noise_conditional.clone()).collect(),
        }
    }

    /// The ground truth with the two roles exchanged.
    pub fn swapped(bmdp: &BeliefMdp) -> Self {
        let g = Self::ground_truth(bmdp);
        BeliefFactorizer {
            state_keys: g.noise_keys,
            noise_keys: g.state_keys,
            state_points: g.noise_points,
            noise_points: g.state_points,
        }
    }

    fn validate(&self, nodes: usize) -> Result<()> {
        if self.state_keys.len() != nodes || self.noise_keys.len() != nodes {
            return Err(Error::Estimator(format!(
                "factorizer covers {} / {} nodes, belief-MDP has {}",
                self.state_keys.len(),
                self.noise_keys.len(),
                nodes
            )));
        }
        let short = |points: &[Vec<Vec<f64>>], keys: &[usize]| {
            !points.is_empty() && keys.iter().any(|&k| k >= points.len())
        };
        if short(&self.state_points, &self.state_keys) || short(&self.noise_points, &self.noise_keys) {
            return Err(Error::Estimator("factorizer points do not cover every key".into()));
        }
        Ok(())
    }

    /// Ground distance between two `(state key, noise key)` pairs.
    fn distance(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let one = |points: &[Vec<Vec<f64>>], x: usize, y: usize| {
            if x == y {
                0.0
            } else if points.is_empty() {
                1.0
            } else {
                points[x]
                    .iter()
                    .zip(&points[y])
                    .map(|(p, q)| total_variation(p, q))
                    .fold(0.0, f64::max)
            }
        };
        one(&self.state_points, a.0, b.0).max(one(&self.noise_points, a.1, b.1))
    }
}

fn normalized(map: &BTreeMap<usize, f64>) -> BTreeMap<usize, f64> {
    let total: f64 = map.values().sum();
    map.iter().map(|(&k, &v)| (k, v / total)).collect()
}

fn average(rows: &[BTreeMap<usize, f64>]) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for r in rows {
        for (&k, &v) in r {
            *out.entry(k).or_insert(0.0) += v / rows.len() as f64;
        }
    }
    out
}

/// Transport distance between two distributions over key pairs. Missing mass on
/// the lighter side sits on a phantom atom at distance 1 from everything.
fn gap(f: &BeliefFactorizer, a: &BTreeMap<(usize, usize), f64>, b: &BTreeMap<(usize, usize), f64>) -> f64 {
    let mut ka: Vec<Option<(usize, usize)>> = a.keys().copied().map(Some).collect();
    let mut kb: Vec<Option<(usize, usize)>> = b.keys().copied().map(Some).collect();
    let mut ma: Vec<f64> = a.values().copied().collect();
    let mut mb: Vec<f64> = b.values().copied().collect();
    let (ta, tb) = (ma.iter().sum::<f64>(), mb.iter().sum::<f64>());
    if ta > tb {
        kb.push(None);
        mb.push(ta - tb);
    } else if tb > ta {
        ka.push(None);
        ma.push(tb - ta);
    }
    transport_cost(&ma, &mb, |i, j| match (ka[i], kb[j]) {
        (Some(x), Some(y)) => f.distance(x, y),
        _ => 1.0,
    })
}

/// Compares, for every expanded node and action, the distribution over the next
/// `(state key, noise key)` with the factored form
/// `p(k_s' | a, k_s) · p(k_z' | k_z, k_s')`, both factors fitted by averaging over the
/// nodes that share the conditioning keys. The gap is the earth mover's distance
/// under the factorizer's key distance, which is total variation for unpointed
/// keys. Returns the largest gap.
pub fn check_belief_preservation(bmdp: &BeliefMdp, f: &BeliefFactorizer) -> Result<f64> {
    f.validate(bmdp.len())?;

    // Induced joint over (k_s', k_z') per (node, action).
    let mut joint: Vec<((usize, usize), BTreeMap<(usize, usize), f64>)> = Vec::new();
    for (id, node) in bmdp.nodes.iter().enumerate() {
        if !node.expanded {
            continue;
        }
        for a in 0..bmdp.actions {
            let mut dist = BTreeMap::new();
            for e in &bmdp.edges[id][a] {
                *dist.entry((f.state_keys[e.next], f.noise_keys[e.next])).or_insert(0.0) += e.prob;
            }
            joint.push(((id, a), dist));
        }
    }

    let mut state_rows: BTreeMap<(usize, usize), Vec<BTreeMap<usize, f64>>> = BTreeMap::new();
    let mut noise_rows: BTreeMap<(usize, usize), Vec<BTreeMap<usize, f64>>> = BTreeMap::new();
    for ((id, a), dist) in &joint {
        let mut marginal = BTreeMap::new();
        for (&(ks, _), &p) in dist {
            *marginal.entry(ks).or_insert(0.0) += p;
        }
        state_rows.entry((*a, f.state_keys[*id])).or_default().push(marginal.clone());
        for (&ks2, &mass) in &marginal {
            if mass <= 0.0 {
                continue;
            }
            let cond: BTreeMap<usize, f64> = dist
                .iter()
                .filter(|((k, _), _)| *k == ks2)
                .map(|(&(_, kz), &p)| (kz, p))
                .collect();
            noise_rows.entry((f.noise_keys[*id], ks2)).or_default().push(normalized(&cond));
        }
    }
    let state_fit: BTreeMap<_, _> = state_rows.iter().map(|(k, rows)| (*k, average(rows))).collect();
    // Noise rows grouped by the current noise key.
    let mut noise_fit: BTreeMap<usize, Vec<(usize, BTreeMap<usize, f64>)>> = BTreeMap::new();
    for (&(kz, ks2), rows) in &noise_rows {
        noise_fit.entry(kz).or_default().push((ks2, average(rows)));
    }

    let mut residual = 0.0_f64;
    for ((id, a), dist) in &joint {
        let fs = &state_fit[&(*a, f.state_keys[*id])];
        let rows = &noise_fit[&f.noise_keys[*id]];
        let mut product: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (&ks2, &ps) in fs {
            // A next state key never reached from this noise key borrows the row of
            // the nearest one that was. Unpointed keys have no nearest and lose the mass.
            let row = match rows.iter().find(|(k, _)| *k == ks2) {
                Some((_, r)) => Some(r),
                None if !f.state_points.is_empty() => rows
                    .iter()
                    .map(|(k, r)| (f.distance((ks2, 0), (*k, 0)), r))
                    .min_by(|x, y| x.0.total_cmp(&y.0))
                    .map(|(_, r)| r),
                None => None,
            };
            if let Some(fz) = row {
                for (&kz2, &pz) in fz {
                    *product.entry((ks2, kz2)).or_insert(0.0) += ps * pz;
                }
            }
        }
        residual = residual.max(gap(f, dist, &product));
    }
    Ok(residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{build_belief_mdp, BeliefMdpConfig};
    use crate::belief::{belief_update, factorize_belief, total_variation};
    use crate::pomdp::{make_fixture, tb1_noiseless, Fixture, NoiseClass, NoiseTransition};

    #[test]
    fn noiseless_residual_is_zero() {
        let p = tb1_noiseless();
        let bmdp = build_belief_mdp(&p, BeliefMdpConfig { horizon_cap: 6, quantization: 1e-6, node_cap: 1000 }).unwrap();
        let r = check_belief_preservation(&bmdp, &BeliefFactorizer::ground_truth(&bmdp)).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn coverage_is_checked() {
        let p = tb1_noiseless();
        let bmdp = build_belief_mdp(&p, BeliefMdpConfig { horizon_cap: 2, quantization: 1e-6, node_cap: 1000 }).unwrap();
        let f = BeliefFactorizer::from_keys(vec![0], vec![0]);
        assert!(check_belief_preservation(&bmdp, &f).is_err());
    }

    #[test]
    fn product_noise_control_factors_up_to_quantization() {
        // TB2 with class-A noise keeps the joint belief a product, so the factored
        // form holds exactly and only rounding shows up.
        let mut p = make_fixture(Fixture::Tb2, 0).unwrap();
        p.noise_transition = NoiseTransition {
            class: NoiseClass::A,
            rows: vec![vec![0.8, 0.2], vec![0.2, 0.8]],
        };
        let q = 1e-4;
        let bmdp = build_belief_mdp(&p, BeliefMdpConfig { horizon_cap: 6, quantization: q, node_cap: 100_000 }).unwrap();
        let truth = check_belief_preservation(&bmdp, &BeliefFactorizer::ground_truth(&bmdp)).unwrap();
        let swapped = check_belief_preservation(&bmdp, &BeliefFactorizer::swapped(&bmdp)).unwrap();
        assert!(truth <= 4.0 * q, "{}", truth);
        assert!(swapped >= 10.0 * truth.max(4.0 * q), "{}", swapped);
    }

    #[test]
    fn tb2_state_update_depends_on_noise_belief() {
        // Same b(s), different b(z | s): the next state marginal after the same
        // action and observation differs, so b_s' is not a function of (b_s, a, o).
        let p = make_fixture(Fixture::Tb2, 0).unwrap();
        let b1 = factorize_belief(&[0.45, 0.05, 0.25, 0.25], 2, 2);
        let b2 = factorize_belief(&[0.05, 0.45, 0.25, 0.25], 2, 2);
        assert!(total_variation(&b1.state_marginal, &b2.state_marginal) < 1e-15);
        let (n1, _) = belief_update(&p, &b1, 0, 0).unwrap();
        let (n2, _) = belief_update(&p, &b2, 0, 0).unwrap();
        assert!(total_variation(&n1.state_marginal, &n2.state_marginal) > 0.01);
    }

    #[test]
    fn unpointed_keys_use_total_variation() {
        let p = make_fixture(Fixture::Tb2, 0).unwrap();
        let bmdp = build_belief_mdp(&p, BeliefMdpConfig { horizon_cap: 3, quantization: 1e-4, node_cap: 1000 }).unwrap();
        let g = BeliefFactorizer::ground_truth(&bmdp);
        let pointed = check_belief_preservation(&bmdp, &g).unwrap();
        let bare = check_belief_preservation(&bmdp, &BeliefFactorizer::from_keys(g.state_keys, g.noise_keys)).unwrap();
        assert!(pointed <= bare + 1e-12);
    }
}
