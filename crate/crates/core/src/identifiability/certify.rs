use std::fmt;

use serde::{Deserialize, Serialize};

use crate::pomdp::{FactoredPomdp, NoiseClass};
use crate::solver::{no_redundancy_check, value_iteration, Mdp, RedundancyReport, DEFAULT_TOL};
use crate::Result;

use super::checks::{check_conditional_independence, check_transition_preservation, reward_groups, ObservationModel};
use super::ObservationEstimator;

/// Which transition condition must hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TransitionMode {
    /// `p(o'|a,o) = p(ŝ'|a,ŝ) · p(ẑ'|ẑ)`
    #[default]
    Strict,
    /// Only `ẑ ⟂ ŝ' | (ŝ, a)`; the noise factor may depend on anything.
    Relaxed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub transition: f64,
    pub reward: f64,
    pub ci: f64,
    pub witness: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            transition: 1e-9,
            reward: 1e-9,
            ci: 1e-9,
            witness: 1e-9,
        }
    }
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Self {
        Tolerances {
            transition: tol,
            reward: tol,
            ci: tol,
            witness: tol,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Certified,
    Refuted,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Certified => "certified",
            Verdict::Refuted => "refuted",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueEquivalence {
    /// Smallest achievable max deviation between the estimated and true tables over
    /// bijections `Ŝ → S`; absent when the sizes differ.
    pub gap: Option<f64>,
    /// `witness[ŝ] = s`, present when `gap` is within tolerance.
    pub witness: Option<Vec<usize>>,
    /// `max_ŝ |V̂*(ŝ) − V*(witness[ŝ])|` when a witness exists.
    pub value_gap: Option<f64>,
    /// `R̂(ŝ, a, ŝ')` (group means).
    pub latent_reward: Vec<Vec<Vec<f64>>>,
    /// `p̂(ŝ' | a, ŝ)` as `[a][ŝ][ŝ']`.
    pub latent_transition: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub mode: TransitionMode,
    pub state_codes: usize,
    pub noise_codes: usize,
    /// The residual of the condition selected by `mode`.
    pub transition_residual: f64,
    pub strict_transition_residual: f64,
    pub reward_residual: f64,
    pub ci_residual: f64,
    pub best_noise_class: Option<NoiseClass>,
    pub redundancy: RedundancyReport,
    pub value_equivalence: ValueEquivalence,
    pub verdict: Verdict,
    pub reasons: Vec<String>,
}

impl CertificationReport {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One verdict line followed by a residual table.
    pub fn summary(&self) -> String {
        let mut out = format!("verdict: {}", self.verdict);
        if !self.reasons.is_empty() {
            out.push_str(&format!(" ({})", self.reasons.join("; ")));
        }
        out.push('\n');
        let rows = [
            ("transition", self.transition_residual),
            ("transition (strict)", self.strict_transition_residual),
            ("reward", self.reward_residual),
            ("conditional independence", self.ci_residual),
            ("witness gap", self.value_equivalence.gap.unwrap_or(f64::INFINITY)),
        ];
        for (name, value) in rows {
            out.push_str(&format!("  {:<26} {:.3e}\n", name, value));
        }
        if let Some(w) = &self.value_equivalence.witness {
            out.push_str(&format!("  witness                    {:?}\n", w));
        }
        out
    }
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

struct WitnessSearch<'a> {
    est: &'a Mdp,
    truth: &'a Mdp,
    /// `bound[i][j]`: sorted-row lower bound for mapping estimated state `i` to true `j`.
    bound: Vec<Vec<f64>>,
    best: f64,
    best_map: Vec<usize>,
}

impl WitnessSearch<'_> {
    fn pair_deviation(&self, map: &[usize], i: usize, j: usize) -> f64 {
        let (fi, fj) = (map[i], map[j]);
        let mut d = 0.0_f64;
        for a in 0..self.est.actions {
            d = d.max((self.est.transition[a][i][j] - self.truth.transition[a][fi][fj]).abs());
            d = d.max((self.est.reward[i][a][j] - self.truth.reward[fi][a][fj]).abs());
        }
        d
    }

    fn descend(&mut self, map: &mut Vec<usize>, used: &mut [bool], current: f64) {
        let depth = map.len();
        if depth == self.est.states {
            if current < self.best {
                self.best = current;
                self.best_map = map.clone();
            }
            return;
        }
        for cand in 0..self.truth.states {
            if used[cand] {
                continue;
            }
            let mut dev = current.max(self.bound[depth][cand]);
            if dev >= self.best {
                continue;
            }
            map.push(cand);
            for i in 0..=depth {
                dev = dev.max(self.pair_deviation(map, depth, i));
                dev = dev.max(self.pair_deviation(map, i, depth));
            }
            if dev < self.best {
                used[cand] = true;
                self.descend(map, used, dev);
                used[cand] = false;
            }
            map.pop();
        }
    }
}

/// Exhaustive branch-and-bound over bijections `f: Ŝ → S` minimising the max
/// deviation of transition and reward tables. Returns `(gap, f)`.
pub fn find_witness(est: &Mdp, truth: &Mdp) -> Option<(f64, Vec<usize>)> {
    if est.states != truth.states || est.actions != truth.actions {
        return None;
    }
    let n = est.states;
    let bound = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let mut d = 0.0_f64;
                    for a in 0..est.actions {
                        d = d.max(sup(&sorted(&est.transition[a][i]), &sorted(&truth.transition[a][j])));
                        d = d.max(sup(&sorted(&est.reward[i][a]), &sorted(&truth.reward[j][a])));
                    }
                    d
                })
                .collect()
        })
        .collect();
    let mut search = WitnessSearch {
        est,
        truth,
        bound,
        best: f64::INFINITY,
        best_map: Vec::new(),
    };
    search.descend(&mut Vec::with_capacity(n), &mut vec![false; n], 0.0);
    (!search.best_map.is_empty()).then_some((search.best, search.best_map))
}

/// Holds the per-instance work shared by many certifications of the same POMDP.
pub struct Certifier<'a> {
    model: &'a ObservationModel,
    truth: Mdp,
    truth_values: Vec<f64>,
    redundancy: RedundancyReport,
    pub tolerances: Tolerances,
    pub mode: TransitionMode,
}

/// Seed for the random policies of the redundancy check on larger instances.
const REDUNDANCY_SEED: u64 = 0;
const REDUNDANCY_POLICIES: usize = 16;

impl<'a> Certifier<'a> {
    pub fn new(p: &FactoredPomdp, model: &'a ObservationModel, tolerances: Tolerances, mode: TransitionMode) -> Result<Self> {
        let truth = p.underlying_mdp();
        let redundancy = no_redundancy_check(&truth, REDUNDANCY_POLICIES, REDUNDANCY_SEED)?;
        let truth_values = value_iteration(&truth, DEFAULT_TOL)?.0.values;
        Ok(Certifier {
            model,
            truth,
            truth_values,
            redundancy,
            tolerances,
            mode,
        })
    }

    pub fn model(&self) -> &ObservationModel {
        self.model
    }

    pub fn certify(&self, g: &ObservationEstimator) -> Result<CertificationReport> {
        let tol = self.tolerances;
        let transition = check_transition_preservation(self.model, g)?;
        let ci = check_conditional_independence(self.model, g, tol.ci)?;
        let (reward_residual, latent_reward) = reward_groups(self.model, g);
        let transition_residual = match self.mode {
            TransitionMode::Strict => transition.residual,
            TransitionMode::Relaxed => ci.ci_residual,
        };

        let est = Mdp {
            states: g.state_codes,
            actions: self.model.actions,
            transition: transition.state_kernel.clone(),
            reward: latent_reward.clone(),
            discount: self.model.discount,
        };
        let mut reasons = Vec::new();
        let (gap, witness, value_gap) = if g.state_codes != self.truth.states {
            reasons.push(format!("size mismatch: |Ŝ| = {} but |S| = {}", g.state_codes, self.truth.states));
            (None, None, None)
        } else {
            match find_witness(&est, &self.truth) {
                Some((gap, f)) if gap <= tol.witness => {
                    let v = value_iteration(&est, DEFAULT_TOL)?.0.values;
                    let vg = (0..est.states).fold(0.0_f64, |m, i| m.max((v[i] - self.truth_values[f[i]]).abs()));
                    (Some(gap), Some(f), Some(vg))
                }
                Some((gap, _)) => {
                    reasons.push(format!("no witness bijection (best gap {:.3e})", gap));
                    (Some(gap), None, None)
                }
                None => (None, None, None),
            }
        };

        if transition_residual > tol.transition {
            reasons.push(format!("transition residual {:.3e}", transition_residual));
        }
        if ci.ci_residual > tol.ci {
            reasons.push(format!("conditional-independence residual {:.3e}", ci.ci_residual));
        }
        if reward_residual > tol.reward {
            reasons.push(format!("reward residual {:.3e}", reward_residual));
        }
        if !self.redundancy.redundant.is_empty() {
            reasons.push(format!("redundant state pairs {:?}", self.redundancy.redundant));
        }
        let verdict = if !reasons.is_empty() {
            Verdict::Refuted
        } else if !self.redundancy.undetermined.is_empty() {
            reasons.push(format!("undetermined state pairs {:?}", self.redundancy.undetermined));
            Verdict::Inconclusive
        } else {
            Verdict::Certified
        };

        Ok(CertificationReport {
            mode: self.mode,
            state_codes: g.state_codes,
            noise_codes: g.noise_codes,
            transition_residual,
            strict_transition_residual: transition.residual,
            reward_residual,
            ci_residual: ci.ci_residual,
            best_noise_class: ci.best_class,
            redundancy: self.redundancy.clone(),
            value_equivalence: ValueEquivalence {
                gap,
                witness,
                value_gap,
                latent_reward,
                latent_transition: transition.state_kernel,
            },
            verdict,
            reasons,
        })
    }
}

/// Runs the redundancy, preservation and witness checks for `g` on `p`.
pub fn certify_disentanglement(
    p: &FactoredPomdp,
    g: &ObservationEstimator,
    tolerances: Tolerances,
    mode: TransitionMode,
) -> Result<CertificationReport> {
    let model = ObservationModel::from_pomdp(p)?;
    Certifier::new(p, &model, tolerances, mode)?.certify(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::{make_fixture, Fixture};

    fn tb1() -> FactoredPomdp {
        make_fixture(Fixture::Tb1, 0).unwrap()
    }

    #[test]
    fn identity_is_certified() {
        let p = tb1();
        let r = certify_disentanglement(&p, &ObservationEstimator::identity(&p).unwrap(), Tolerances::default(), TransitionMode::Strict).unwrap();
        assert!(r.is_certified(), "{}", r.summary());
        assert_eq!(r.value_equivalence.witness, Some(vec![0, 1]));
        assert!(r.value_equivalence.gap.unwrap() <= 1e-12);
        assert!(r.value_equivalence.value_gap.unwrap() < 1e-8);
    }

    #[test]
    fn relabeled_identity_has_relabeling_as_witness() {
        let p = tb1();
        let g = ObservationEstimator::identity(&p).unwrap().relabel(&[1, 0], &[1, 0]).unwrap();
        let r = certify_disentanglement(&p, &g, Tolerances::default(), TransitionMode::Strict).unwrap();
        assert!(r.is_certified());
        assert_eq!(r.value_equivalence.witness, Some(vec![1, 0]));
    }

    #[test]
    fn swap_is_refuted_on_reward() {
        let p = tb1();
        let r = certify_disentanglement(&p, &ObservationEstimator::swap(&p).unwrap(), Tolerances::default(), TransitionMode::Strict).unwrap();
        assert_eq!(r.verdict, Verdict::Refuted);
        assert_eq!(r.reward_residual, 1.0);
    }

    #[test]
    fn witness_search_recovers_hidden_permutation() {
        let p = make_fixture(Fixture::GridNoise, 3).unwrap();
        let truth = p.underlying_mdp();
        let perm = [2usize, 0, 3, 1];
        // est state i plays true state perm[i].
        let n = truth.states;
        let est = Mdp {
            states: n,
            actions: truth.actions,
            transition: (0..truth.actions)
                .map(|a| (0..n).map(|i| (0..n).map(|j| truth.transition[a][perm[i]][perm[j]]).collect()).collect())
                .collect(),
            reward: (0..n)
                .map(|i| (0..truth.actions).map(|a| (0..n).map(|j| truth.reward[perm[i]][a][perm[j]]).collect()).collect())
                .collect(),
            discount: truth.discount,
        };
        let (gap, f) = find_witness(&est, &truth).unwrap();
        assert_eq!(gap, 0.0);
        assert_eq!(f, perm.to_vec());
    }

    #[test]
    fn report_serializes() {
        let p = tb1();
        let r = certify_disentanglement(&p, &ObservationEstimator::identity(&p).unwrap(), Tolerances::default(), TransitionMode::Strict).unwrap();
        let back: CertificationReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.verdict, Verdict::Certified);
        assert!(r.summary().starts_with("verdict: certified\n"));
    }
}
