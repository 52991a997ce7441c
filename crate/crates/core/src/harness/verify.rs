use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::{
    belief_reward, belief_update, build_belief_mdp, condition_on_observation, factorize_belief, total_variation,
    BeliefMdpConfig, FactoredBelief,
};
use crate::identifiability::{
    check_belief_preservation, BeliefFactorizer, Certifier, ObservationEstimator, ObservationModel, Tolerances,
    TransitionMode, Verdict,
};
use crate::pomdp::{make_fixture, FactoredPomdp, Fixture};
use crate::rng::{dirichlet_ones, stream_rng, streams};
use crate::solver::no_redundancy_check;
use crate::Result;

use super::config::VerifySettings;

/// Reward offset applied by fault injection.
pub const FAULT_OFFSET: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyTolerances {
    pub filter: f64,
    pub reward_invariance: f64,
    pub certification: Tolerances,
    /// Bound on the ground-truth belief-level residual; `|O| · quantization` when absent.
    pub belief: Option<f64>,
}

impl Default for VerifyTolerances {
    fn default() -> Self {
        VerifyTolerances {
            filter: 1e-10,
            reward_invariance: 1e-12,
            certification: Tolerances::default(),
            belief: None,
        }
    }
}

impl VerifyTolerances {
    /// Every tolerance set to `tol`.
    pub fn uniform(tol: f64) -> Self {
        VerifyTolerances {
            filter: tol,
            reward_invariance: tol,
            certification: Tolerances::uniform(tol),
            belief: Some(tol),
        }
    }

    fn belief_bound(&self, observations: usize, q: f64) -> f64 {
        self.belief.unwrap_or(observations as f64 * q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Requirement {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub fixture: Fixture,
    pub check: String,
    pub value: f64,
    pub requirement: Requirement,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub fault_injected: bool,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn find(&self, fixture: Fixture, check: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.fixture == fixture && c.check == check)
    }

    /// `verify.json` and `verify.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("verify.json"), serde_json::to_string_pretty(self)?)?;
        let mut w = csv::Writer::from_path(dir.join("verify.csv"))?;
        for c in &self.checks {
            w.serialize(c)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Recorder {
    fixture: Fixture,
    checks: Vec<CheckResult>,
}

impl Recorder {
    fn push(&mut self, check: &str, value: f64, requirement: Requirement, threshold: f64) {
        let passed = match requirement {
            Requirement::AtMost => value <= threshold,
            Requirement::AtLeast => value >= threshold,
        };
        self.checks.push(CheckResult {
            fixture: self.fixture,
            check: check.to_string(),
            value,
            requirement,
            threshold,
            passed,
        });
    }

    fn flag(&mut self, check: &str, ok: bool) {
        self.push(check, if ok { 1.0 } else { 0.0 }, Requirement::AtLeast, 1.0);
    }
}

/// Posterior over the joint latent after `history = (o_0, a_0, o_1, …)`, by summing
/// over every latent path.
pub fn enumerate_posterior(p: &FactoredPomdp, first: usize, steps: &[(usize, usize)]) -> Option<Vec<f64>> {
    let nz = p.sizes.noises;
    let n = p.sizes.joint();
    let mut out = vec![0.0; n];
    fn walk(p: &FactoredPomdp, x: usize, w: f64, steps: &[(usize, usize)], out: &mut [f64]) {
        let nz = p.sizes.noises;
        let Some((&(a, o), rest)) = steps.split_first() else {
            out[x] += w;
            return;
        };
        for y in 0..p.sizes.joint() {
            let t = p.transition_prob(a, x / nz, x % nz, y / nz, y % nz) * p.emission[y / nz][y % nz][o];
            if t > 0.0 {
                walk(p, y, w * t, rest, out);
            }
        }
    }
    for x in 0..n {
        let w = p.initial_belief[x] * p.emission[x / nz][x % nz][first];
        if w > 0.0 {
            walk(p, x, w, steps, &mut out);
        }
    }
    let total: f64 = out.iter().sum();
    (total > 0.0).then(|| out.into_iter().map(|x| x / total).collect())
}

/// Largest TV between the recursive filter and path enumeration over every
/// positive-probability history with at most `depth` actions.
pub fn filter_discrepancy(p: &FactoredPomdp, depth: usize) -> Result<f64> {
    fn extend(
        p: &FactoredPomdp,
        first: usize,
        steps: &mut Vec<(usize, usize)>,
        b: &FactoredBelief,
        depth: usize,
        worst: &mut f64,
    ) -> Result<()> {
        if let Some(truth) = enumerate_posterior(p, first, steps) {
            *worst = worst.max(total_variation(&b.joint, &truth));
        }
        if steps.len() == depth {
            return Ok(());
        }
        for a in 0..p.sizes.actions {
            for o in 0..p.sizes.observations {
                let Ok((next, _)) = belief_update(p, b, a, o) else { continue };
                steps.push((a, o));
                extend(p, first, steps, &next, depth, worst)?;
                steps.pop();
            }
        }
        Ok(())
    }
    let mut worst = 0.0_f64;
    let prior = FactoredBelief::initial(p);
    for o in 0..p.sizes.observations {
        if let Ok((b, _)) = condition_on_observation(p, &prior, o) {
            extend(p, o, &mut Vec::new(), &b, depth, &mut worst)?;
        }
    }
    Ok(worst)
}

/// Replaces every noise conditional with a random row, keeping state marginals.
fn perturb_noise(b: &FactoredBelief, rng: &mut crate::rng::StreamRng) -> FactoredBelief {
    let mut c = b.clone();
    for row in &mut c.noise_conditional {
        *row = dirichlet_ones(rng, row.len());
    }
    factorize_belief(&c.recompose(), b.states, b.noises)
}

/// Largest change in belief reward when the noise conditionals of both beliefs are
/// redrawn, over `count` random belief pairs.
pub fn reward_noise_sensitivity(p: &FactoredPomdp, count: usize, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, streams::VERIFY);
    let (ns, nz) = (p.sizes.states, p.sizes.noises);
    let mut worst = 0.0_f64;
    for i in 0..count {
        let b = factorize_belief(&dirichlet_ones(&mut rng, ns * nz), ns, nz);
        let next = factorize_belief(&dirichlet_ones(&mut rng, ns * nz), ns, nz);
        let a = i % p.sizes.actions;
        let base = belief_reward(p, &b, a, &next);
        let moved = belief_reward(p, &perturb_noise(&b, &mut rng), a, &perturb_noise(&next, &mut rng));
        worst = worst.max((base - moved).abs());
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub fixtures: Vec<Fixture>,
    pub tolerances: VerifyTolerances,
    pub inject_fault: bool,
    pub belief_cap: usize,
    pub history_depth: usize,
    pub perturbations: usize,
    pub seed: u64,
}

impl VerifyOptions {
    pub fn from_settings(v: &VerifySettings, seed: u64) -> Self {
        VerifyOptions {
            fixtures: v.fixtures.clone(),
            tolerances: v.tolerance.map_or_else(VerifyTolerances::default, VerifyTolerances::uniform),
            inject_fault: v.inject_fault,
            belief_cap: v.belief_cap,
            history_depth: v.history_depth,
            perturbations: v.perturbations,
            seed,
        }
    }
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self::from_settings(&VerifySettings::default(), 0)
    }
}

fn observation_checks(rec: &mut Recorder, p: &FactoredPomdp, opts: &VerifyOptions) -> Result<()> {
    let tol = opts.tolerances.certification;
    let mut model = ObservationModel::from_pomdp(p)?;
    if opts.inject_fault {
        model.reward[0][0][0] += FAULT_OFFSET;
    }
    let certifier = Certifier::new(p, &model, tol, TransitionMode::Strict)?;
    let r = certifier.certify(&ObservationEstimator::identity(p)?)?;
    rec.push("transition_residual", r.transition_residual, Requirement::AtMost, tol.transition);
    rec.push("reward_residual", r.reward_residual, Requirement::AtMost, tol.reward);
    rec.push("ci_residual", r.ci_residual, Requirement::AtMost, tol.ci);
    rec.push(
        "witness_gap",
        r.value_equivalence.gap.unwrap_or(f64::INFINITY),
        Requirement::AtMost,
        tol.witness,
    );
    rec.flag("ground_truth_certified", r.verdict == Verdict::Certified);
    for (name, g) in [("swap_refuted", ObservationEstimator::swap(p)), ("xor_refuted", ObservationEstimator::xor(p))] {
        if let Ok(g) = g {
            rec.flag(name, certifier.certify(&g)?.verdict == Verdict::Refuted);
        }
    }
    Ok(())
}

fn belief_checks(rec: &mut Recorder, p: &FactoredPomdp, opts: &VerifyOptions) -> Result<()> {
    let bmdp = build_belief_mdp(p, BeliefMdpConfig::for_pomdp(p, opts.belief_cap))?;
    let q = bmdp.config.quantization;
    let bound = opts.tolerances.belief_bound(p.sizes.observations, q);
    let truth = check_belief_preservation(&bmdp, &BeliefFactorizer::ground_truth(&bmdp))?;
    let swapped = check_belief_preservation(&bmdp, &BeliefFactorizer::swapped(&bmdp))?;
    rec.push("belief_ground_truth_residual", truth, Requirement::AtMost, bound);
    rec.push("belief_swap_ratio", swapped / truth.max(bound).max(f64::MIN_POSITIVE), Requirement::AtLeast, 10.0);
    Ok(())
}

/// Runs the invariant checks on each fixture. Bijective fixtures get the
/// observation-level certification checks; the others get the belief-level check.
pub fn verify_suite(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    for &fixture in &opts.fixtures {
        let p = make_fixture(fixture, opts.seed)?;
        let mut rec = Recorder {
            fixture,
            checks: Vec::new(),
        };
        rec.push(
            "filter_vs_enumeration",
            filter_discrepancy(&p, opts.history_depth)?,
            Requirement::AtMost,
            opts.tolerances.filter,
        );
        rec.push(
            "belief_reward_noise_invariance",
            reward_noise_sensitivity(&p, opts.perturbations, opts.seed),
            Requirement::AtMost,
            opts.tolerances.reward_invariance,
        );
        let redundancy = no_redundancy_check(&p.underlying_mdp(), 16, opts.seed)?;
        rec.flag("no_redundancy", redundancy.all_distinct());
        if p.invertible {
            observation_checks(&mut rec, &p, opts)?;
        } else {
            belief_checks(&mut rec, &p, opts)?;
        }
        checks.extend(rec.checks);
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        checks,
        fault_injected: opts.inject_fault,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tb1_only() -> VerifyOptions {
        VerifyOptions {
            fixtures: vec![Fixture::Tb1],
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn tb1_passes_every_check() {
        let r = verify_suite(&tb1_only()).unwrap();
        assert!(r.passed, "{:?}", r.failures().collect::<Vec<_>>());
        assert!(r.find(Fixture::Tb1, "swap_refuted").is_some());
    }

    #[test]
    fn injected_reward_fault_is_caught() {
        let r = verify_suite(&VerifyOptions {
            inject_fault: true,
            ..tb1_only()
        })
        .unwrap();
        assert!(!r.passed);
        let c = r.find(Fixture::Tb1, "reward_residual").unwrap();
        assert!(!c.passed);
        assert_eq!(c.value, FAULT_OFFSET);
        assert!(r.find(Fixture::Tb1, "transition_residual").unwrap().passed);
    }

    #[test]
    fn zero_tolerance_exposes_rounding() {
        let r = verify_suite(&VerifyOptions {
            tolerances: VerifyTolerances::uniform(0.0),
            ..tb1_only()
        })
        .unwrap();
        assert!(!r.passed);
        assert!(r.failures().any(|c| c.value > 0.0 && c.value < 1e-12));
    }

    #[test]
    fn enumeration_agrees_with_hand_computed_tb1_posterior() {
        let p = make_fixture(Fixture::Tb1, 0).unwrap();
        // TB1 emissions are exact, so the posterior is a point mass on the decoded pair.
        // Seeing (s=1, z=1), staying, then seeing (s=1, z=0).
        let post = enumerate_posterior(&p, 3, &[(crate::pomdp::STAY, 2)]).unwrap();
        assert_eq!(post, vec![0.0, 0.0, 1.0, 0.0]);
        // Staying cannot change the state.
        assert!(enumerate_posterior(&p, 3, &[(crate::pomdp::STAY, 1)]).is_none());
    }

    #[test]
    fn uniform_belief_bound_is_absolute() {
        let t = VerifyTolerances::uniform(1e-3);
        assert_eq!(t.belief_bound(4, 1e-4), 1e-3);
        assert_eq!(VerifyTolerances::uniform(0.0).belief_bound(4, 1e-4), 0.0);
        assert!((VerifyTolerances::default().belief_bound(4, 1e-4) - 4e-4).abs() < 1e-18);
    }
}
