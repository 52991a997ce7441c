use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{belief_value, build_belief_mdp, observed_start_value, BeliefMdpConfig};
use crate::identifiability::{certify_disentanglement, CertificationReport, ObservationEstimator, Verdict};
use crate::learner::{
    asymmetry_test, filter_posterior, init_model, train, write_loss_curve, AsymmetryReport, LatentController,
    LearnedWorldModel, LossPoint, ModelShape, TrainingConfig,
};
use crate::pomdp::{sample_episode, Episode, EpisodeStart, FactoredPomdp, UniformController};
use crate::rng::{stream_rng, streams};
use crate::Result;

use super::config::ExperimentConfig;
use super::metrics::{count_pairs, mutual_information, write_metrics_csv, Aggregate, MetricsRow};
use super::parallel_map;

/// Value-iteration tolerance on the belief-MDP.
const BELIEF_VALUE_TOL: f64 = 1e-10;

fn uniform_episodes(p: &FactoredPomdp, count: usize, length: usize, seed: u64, stream: u64) -> Result<Vec<Episode>> {
    let mut rng = stream_rng(seed, stream);
    let mut controller = UniformController {
        actions: p.sizes.actions,
    };
    (0..count)
        .map(|_| sample_episode(p, &mut controller, length, EpisodeStart::Initial, rng.random()))
        .collect()
}

/// The replay buffer a seed trains on.
pub fn training_episodes(p: &FactoredPomdp, config: &ExperimentConfig, seed: u64) -> Result<Vec<Episode>> {
    uniform_episodes(p, config.data.train_episodes, config.data.episode_length, seed, streams::TRAIN_DATA)
}

/// Smallest horizon cap whose truncation bias is within `tol`.
pub fn horizon_for(p: &FactoredPomdp, tol: f64) -> usize {
    let scale = p.reward_bound() / (1.0 - p.discount);
    if scale <= tol || p.discount == 0.0 {
        return 1;
    }
    ((tol / scale).ln() / p.discount.ln()).ceil().max(1.0) as usize
}

/// Optimal discounted return for a controller that sees `o_0` before acting.
pub fn belief_optimum(p: &FactoredPomdp, config: &ExperimentConfig) -> Result<f64> {
    let mut bc = BeliefMdpConfig::for_pomdp(p, horizon_for(p, config.value_tolerance));
    bc.node_cap = config.belief.node_cap;
    if let Some(q) = config.belief.quantization {
        bc.quantization = q;
    }
    let bmdp = build_belief_mdp(p, bc)?;
    let v = belief_value(&bmdp, BELIEF_VALUE_TOL)?;
    Ok(observed_start_value(&bmdp, &v.values))
}

/// The encoder read off the first-step posteriors: `o ↦ (argmax q(ŝ|o), argmax q(ẑ|o))`.
pub fn induced_estimator(model: &LearnedWorldModel) -> Result<ObservationEstimator> {
    let sh = model.shape;
    let qs = model.params.posterior_state_init.softmax();
    let qz = model.params.posterior_noise_init.softmax();
    let map = (0..sh.observations())
        .map(|o| (crate::learner::argmax(qs.row(o)), crate::learner::argmax(qz.row(o))))
        .collect();
    ObservationEstimator::new(sh.state_codes, sh.noise_codes, map)
}

/// Everything measured for one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub row: MetricsRow,
    pub optimum: f64,
    pub policy: Vec<usize>,
    pub asymmetry: AsymmetryReport,
    pub certification: Option<CertificationReport>,
}

/// Greedy return, MI of the argmax codes against the true state, the asymmetry
/// test and, for bijective emissions, certification of the induced estimator.
pub fn evaluate_model(
    p: &FactoredPomdp,
    model: &LearnedWorldModel,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Evaluation> {
    let tag = |stage| move |e: crate::Error| e.at_stage(seed, stage);
    let data = config.data;
    let sh = model.shape;

    let explore = uniform_episodes(p, data.eval_episodes, data.eval_length, seed, streams::EVAL_EXPLORE).map_err(tag("explore"))?;
    let mut s_pairs = Vec::new();
    let mut z_pairs = Vec::new();
    for e in &explore {
        let beliefs = filter_posterior(model, e).map_err(tag("filter"))?;
        for (step, (qs, qz)) in e.steps.iter().zip(&beliefs) {
            s_pairs.push((crate::learner::argmax(qs), step.state));
            z_pairs.push((crate::learner::argmax(qz), step.state));
        }
    }
    let ns = p.sizes.states;
    let mi_s = mutual_information(&count_pairs(s_pairs, sh.state_codes, ns)).map_err(tag("mutual_information"))?;
    let mi_z = mutual_information(&count_pairs(z_pairs, sh.noise_codes, ns)).map_err(tag("mutual_information"))?;

    let mut controller = LatentController::new(model, p.discount).map_err(tag("plan"))?;
    let policy = controller.policy().to_vec();
    let mut rng = stream_rng(seed, streams::EVAL_GREEDY);
    let mut returns = Vec::with_capacity(data.eval_episodes);
    for _ in 0..data.eval_episodes {
        let e = sample_episode(p, &mut controller, data.eval_length, EpisodeStart::Initial, rng.random()).map_err(tag("evaluate"))?;
        returns.push(e.discounted_return(p.discount));
    }
    let n = returns.len() as f64;
    let mean_return = returns.iter().sum::<f64>() / n;
    let std_return = (returns.iter().map(|r| (r - mean_return) * (r - mean_return)).sum::<f64>() / n).sqrt();
    let optimum = belief_optimum(p, config).map_err(tag("optimum"))?;

    let asymmetry = asymmetry_test(model, &explore).map_err(tag("asymmetry"))?;
    let certification = if p.invertible && sh.observations() == p.sizes.observations {
        match induced_estimator(model) {
            Ok(g) => Some(
                certify_disentanglement(p, &g, config.certify.tolerances, config.certify.mode).map_err(tag("certify"))?,
            ),
            Err(_) => None,
        }
    } else {
        None
    };

    Ok(Evaluation {
        row: MetricsRow {
            seed,
            mi_s_hat_vs_s: mi_s,
            mi_z_hat_vs_s: mi_z,
            transition_residual: certification.as_ref().map(|c| c.transition_residual),
            reward_residual: certification.as_ref().map(|c| c.reward_residual),
            value_gap: optimum - mean_return,
            mean_return,
            std_return,
        },
        optimum,
        policy,
        asymmetry,
        certification,
    })
}

/// A trained model with its loss curve.
pub fn train_seed(p: &FactoredPomdp, config: &ExperimentConfig, seed: u64) -> Result<(LearnedWorldModel, Vec<LossPoint>)> {
    let tag = |stage| move |e: crate::Error| e.at_stage(seed, stage);
    let lc = config.learner;
    let shape = ModelShape::for_pomdp(p, lc.state_codes, lc.noise_codes, lc.training.switches.emission());
    let model = init_model(shape, seed).map_err(tag("init"))?.with_weights(lc.alpha, lc.beta);
    let episodes = training_episodes(p, config, seed).map_err(tag("data"))?;
    let training = TrainingConfig { seed, ..lc.training };
    train(&model, &episodes, &training).map_err(tag("train"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub evaluation: Evaluation,
    pub final_loss: LossPoint,
    /// Largest KL value anywhere on the loss curve.
    pub max_kl: f64,
}

pub fn seed_dir(config: &ExperimentConfig, seed: u64) -> PathBuf {
    config.output_dir.join(format!("seed_{}", seed))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Builds the instance, trains, evaluates and writes `model.json`, `loss.csv` and
/// `certification.json` under `seed_<seed>/`.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let tag = |stage| move |e: crate::Error| e.at_stage(seed, stage);
    let p = config.instance.build(seed).map_err(tag("instance"))?;
    let (model, curve) = train_seed(&p, config, seed)?;
    let dir = seed_dir(config, seed);
    fs::create_dir_all(&dir).map_err(|e| crate::Error::from(e).at_stage(seed, "write"))?;
    model.write_json(&dir.join("model.json")).map_err(tag("write"))?;
    write_loss_curve(&dir.join("loss.csv"), &curve).map_err(tag("write"))?;
    let evaluation = evaluate_model(&p, &model, config, seed)?;
    if let Some(c) = &evaluation.certification {
        write_json(&dir.join("certification.json"), c).map_err(tag("write"))?;
    }
    let max_kl = curve.iter().fold(0.0_f64, |m, q| m.max(q.kl_s.abs()).max(q.kl_z.abs()));
    Ok(SeedOutcome {
        evaluation,
        final_loss: *curve.last().expect("curve has a final row"),
        max_kl,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub optimum: f64,
    pub policy: Vec<usize>,
    pub final_loss: LossPoint,
    pub asymmetry_passed: bool,
    pub verdict: Option<Verdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<MetricsRow>,
    pub aggregate: Aggregate,
    pub outcomes: Vec<SeedOutcome>,
}

impl ExperimentReport {
    pub fn seed_summaries(&self) -> Vec<SeedSummary> {
        self.outcomes
            .iter()
            .map(|o| SeedSummary {
                seed: o.evaluation.row.seed,
                optimum: o.evaluation.optimum,
                policy: o.evaluation.policy.clone(),
                final_loss: o.final_loss,
                asymmetry_passed: o.evaluation.asymmetry.passed,
                verdict: o.evaluation.certification.as_ref().map(|c| c.verdict),
            })
            .collect()
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    aggregate: &'a Aggregate,
    seeds: Vec<SeedSummary>,
}

/// Runs every seed (concurrently where cores allow) and writes `metrics.csv`,
/// `summary.json` and `config.json` to the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let outcomes = parallel_map(&config.seeds, |&seed| run_seed(config, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<MetricsRow> = outcomes.iter().map(|o| o.evaluation.row.clone()).collect();
    let aggregate = Aggregate::from_rows(&rows)?;
    let report = ExperimentReport {
        rows,
        aggregate,
        outcomes,
    };
    write_metrics_csv(&config.output_dir.join("metrics.csv"), &report.rows, &report.aggregate)?;
    write_json(
        &config.output_dir.join("summary.json"),
        &Summary {
            config,
            aggregate: &report.aggregate,
            seeds: report.seed_summaries(),
        },
    )?;
    fs::write(config.output_dir.join("config.json"), config.to_json()?)?;
    Ok(report)
}
