use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::belief::total_variation;
use crate::pomdp::FactoredPomdp;
use crate::{Error, Result};

use super::certify::{Certifier, Tolerances, TransitionMode, Verdict};
use super::checks::ObservationModel;
use super::ObservationEstimator;

/// Largest observation space searched exhaustively.
pub const SEARCH_LIMIT: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizationSummary {
    pub state_codes: usize,
    pub noise_codes: usize,
    /// Ŝ-groupings compatible with the reward signatures.
    pub groupings: usize,
    /// Groupings dropped because `p(ŝ' | a, o)` varies inside a group.
    pub ci_pruned: usize,
    /// Full estimators sent to certification.
    pub candidates: usize,
    pub certified: usize,
    /// Why the factorisation produced nothing, if it did not.
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Certified estimators in canonical form, one per relabeling class.
    pub certified: Vec<ObservationEstimator>,
    pub factorizations: Vec<FactorizationSummary>,
}

/// Observations `i` and `j` may share `ŝ` only if their reward rows and columns agree.
fn reward_compatible(model: &ObservationModel, tol: f64) -> Vec<Vec<bool>> {
    let n = model.observations;
    let same = |i: usize, j: usize| {
        for a in 0..model.actions {
            for k in 0..n {
                if (model.reward[i][a][k] - model.reward[j][a][k]).abs() > tol
                    || (model.reward[k][a][i] - model.reward[k][a][j]).abs() > tol
                {
                    return false;
                }
            }
        }
        true
    };
    (0..n).map(|i| (0..n).map(|j| same(i, j)).collect()).collect()
}

/// All partitions of `0..n` into groups of size `size`, every group pairwise compatible.
/// Groups are listed by smallest member.
fn equal_partitions(n: usize, size: usize, compatible: &[Vec<bool>]) -> Vec<Vec<Vec<usize>>> {
    fn extend(
        size: usize,
        compatible: &[Vec<bool>],
        free: &mut Vec<usize>,
        current: &mut Vec<Vec<usize>>,
        out: &mut Vec<Vec<Vec<usize>>>,
    ) {
        if free.is_empty() {
            out.push(current.clone());
            return;
        }
        let head = free.remove(0);
        let candidates: Vec<usize> = free.iter().copied().filter(|&o| compatible[head][o]).collect();
        let mut chosen = vec![head];
        choose(size, compatible, &candidates, 0, &mut chosen, free, current, out);
        free.insert(0, head);
    }

    #[allow(clippy::too_many_arguments)]
    fn choose(
        size: usize,
        compatible: &[Vec<bool>],
        candidates: &[usize],
        start: usize,
        chosen: &mut Vec<usize>,
        free: &mut Vec<usize>,
        current: &mut Vec<Vec<usize>>,
        out: &mut Vec<Vec<Vec<usize>>>,
    ) {
        if chosen.len() == size {
            let mut rest: Vec<usize> = free.iter().copied().filter(|o| !chosen.contains(o)).collect();
            current.push(chosen.clone());
            extend(size, compatible, &mut rest, current, out);
            current.pop();
            return;
        }
        for idx in start..candidates.len() {
            let o = candidates[idx];
            if chosen.iter().all(|&c| compatible[c][o]) {
                chosen.push(o);
                choose(size, compatible, candidates, idx + 1, chosen, free, current, out);
                chosen.pop();
            }
        }
    }

    let mut out = Vec::new();
    extend(size, compatible, &mut (0..n).collect(), &mut Vec::new(), &mut out);
    out
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Ŝ-only part of the conditional-independence residual for a grouping.
fn grouping_ci_residual(model: &ObservationModel, groups: &[Vec<usize>], group_of: &[usize]) -> f64 {
    let k = groups.len();
    let mut worst = 0.0_f64;
    for a in 0..model.actions {
        let per_o: Vec<Vec<f64>> = (0..model.observations)
            .map(|o| {
                let mut out = vec![0.0; k];
                for (o2, &p) in model.kernel[a][o].iter().enumerate() {
                    out[group_of[o2]] += p;
                }
                out
            })
            .collect();
        for g in groups {
            let mut mean = vec![0.0; k];
            for &o in g {
                for (m, x) in mean.iter_mut().zip(&per_o[o]) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= g.len() as f64);
            for &o in g {
                worst = worst.max(total_variation(&per_o[o], &mean));
            }
        }
    }
    worst
}

/// Exhaustive search for certified estimators over every factor-size pair with
/// `|Ŝ| · |Ẑ| = |O|`, returning one estimator per relabeling class.
pub fn search_estimators(p: &FactoredPomdp, mode: TransitionMode, tolerances: Tolerances) -> Result<SearchResult> {
    let model = ObservationModel::from_pomdp(p)?;
    let n = model.observations;
    if n > SEARCH_LIMIT {
        return Err(Error::SearchTooLarge {
            observations: n,
            limit: SEARCH_LIMIT,
        });
    }
    let certifier = Certifier::new(p, &model, tolerances, mode)?;
    let compatible = reward_compatible(&model, tolerances.reward);

    let mut certified = BTreeSet::new();
    let mut factorizations = Vec::new();
    for ks in (1..=n).filter(|k| n % k == 0) {
        let kz = n / ks;
        let groupings = equal_partitions(n, kz, &compatible);
        let mut summary = FactorizationSummary {
            state_codes: ks,
            noise_codes: kz,
            groupings: groupings.len(),
            ci_pruned: 0,
            candidates: 0,
            certified: 0,
            note: None,
        };
        if groupings.is_empty() {
            summary.note = Some("refuted by reward preservation: no grouping respects reward signatures".into());
        }
        // Group 0 keeps the identity labeling, so a single group needs no enumeration.
        let labelings = if ks > 1 && !groupings.is_empty() {
            permutations(kz)
        } else {
            vec![(0..kz).collect()]
        };
        let mut last_refusal = None;
        for groups in &groupings {
            let mut group_of = vec![0; n];
            for (gi, g) in groups.iter().enumerate() {
                for &o in g {
                    group_of[o] = gi;
                }
            }
            if grouping_ci_residual(&model, groups, &group_of) > tolerances.ci {
                summary.ci_pruned += 1;
                continue;
            }
            // The first group's labels are fixed, which removes the Ẑ relabeling symmetry.
            let mut choice = vec![0usize; ks];
            loop {
                let mut map = vec![(0, 0); n];
                for (gi, g) in groups.iter().enumerate() {
                    let perm = if gi == 0 { &labelings[0] } else { &labelings[choice[gi]] };
                    for (pos, &o) in g.iter().enumerate() {
                        map[o] = (gi, perm[pos]);
                    }
                }
                let g = ObservationEstimator::new(ks, kz, map)?;
                summary.candidates += 1;
                let report = certifier.certify(&g)?;
                if report.verdict == Verdict::Certified {
                    summary.certified += 1;
                    certified.insert(g.canonical());
                } else {
                    last_refusal = Some(report.reasons.join("; "));
                }
                // Odometer over the labelings of groups 1..ks.
                let mut idx = 1;
                while idx < ks {
                    choice[idx] += 1;
                    if choice[idx] < labelings.len() {
                        break;
                    }
                    choice[idx] = 0;
                    idx += 1;
                }
                if idx >= ks {
                    break;
                }
            }
        }
        if summary.certified == 0 && summary.note.is_none() {
            summary.note = Some(match last_refusal {
                Some(r) => format!("refuted: {}", r),
                None => "refuted by conditional independence".into(),
            });
        }
        factorizations.push(summary);
    }
    Ok(SearchResult {
        certified: certified.into_iter().collect(),
        factorizations,
    })
}
