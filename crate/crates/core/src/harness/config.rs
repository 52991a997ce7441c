use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::identifiability::{ObservationEstimator, Tolerances, TransitionMode};
use crate::learner::{TrainingConfig, DEFAULT_ALPHA, DEFAULT_BETA};
use crate::pomdp::{generate_random, make_fixture, FactoredPomdp, Fixture, NoiseClass, RandomInstance, Sizes};
use crate::{Error, Result};

/// Where the POMDP comes from. The run seed feeds fixtures and generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceChoice {
    Fixture(Fixture),
    Random {
        sizes: Sizes,
        class: NoiseClass,
        #[serde(default = "yes")]
        invertible: bool,
    },
    /// A POMDP JSON document; the seed is ignored.
    File(PathBuf),
}

fn yes() -> bool {
    true
}

impl Default for InstanceChoice {
    fn default() -> Self {
        InstanceChoice::Fixture(Fixture::GridNoise)
    }
}

impl InstanceChoice {
    pub fn build(&self, seed: u64) -> Result<FactoredPomdp> {
        match self {
            InstanceChoice::Fixture(f) => make_fixture(*f, seed),
            InstanceChoice::Random { sizes, class, invertible } => generate_random(&RandomInstance {
                sizes: *sizes,
                class: *class,
                invertible: *invertible,
                seed,
            }),
            InstanceChoice::File(path) => FactoredPomdp::load(path),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub state_codes: usize,
    pub noise_codes: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Its `seed` is replaced by the run seed.
    pub training: TrainingConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            state_codes: 4,
            noise_codes: 3,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            training: TrainingConfig::default(),
        }
    }
}

/// Episode budgets. Training data and MI episodes use a uniform random controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train_episodes: usize,
    pub episode_length: usize,
    pub eval_episodes: usize,
    pub eval_length: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_episodes: 100,
            episode_length: 50,
            eval_episodes: 100,
            eval_length: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeliefSettings {
    pub horizon_cap: usize,
    /// Defaults to 1e-6 for bijective emissions and 1e-4 otherwise.
    pub quantization: Option<f64>,
    pub node_cap: usize,
}

impl Default for BeliefSettings {
    fn default() -> Self {
        BeliefSettings {
            horizon_cap: 8,
            quantization: None,
            node_cap: crate::belief::DEFAULT_NODE_CAP,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    /// `o ↦ (s, z)` read off the emission.
    #[default]
    Identity,
    Swap,
    Xor,
    Map(ObservationEstimator),
}

impl EstimatorChoice {
    pub fn build(&self, p: &FactoredPomdp) -> Result<ObservationEstimator> {
        match self {
            EstimatorChoice::Identity => ObservationEstimator::identity(p),
            EstimatorChoice::Swap => ObservationEstimator::swap(p),
            EstimatorChoice::Xor => ObservationEstimator::xor(p),
            EstimatorChoice::Map(g) => ObservationEstimator::new(g.state_codes, g.noise_codes, g.map.clone()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifySettings {
    pub estimator: EstimatorChoice,
    pub mode: TransitionMode,
    pub tolerances: Tolerances,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifySettings {
    pub fixtures: Vec<Fixture>,
    /// Replaces every tolerance when set.
    pub tolerance: Option<f64>,
    pub inject_fault: bool,
    pub belief_cap: usize,
    pub history_depth: usize,
    pub perturbations: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            fixtures: vec![Fixture::Tb1, Fixture::Tb2, Fixture::GridNoise],
            tolerance: None,
            inject_fault: false,
            belief_cap: 8,
            history_depth: 4,
            perturbations: 200,
        }
    }
}

/// One JSON document configures every command. All fields are optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub instance: InstanceChoice,
    pub seeds: Vec<u64>,
    pub learner: LearnerConfig,
    pub data: DataConfig,
    /// Largest truncation bias accepted when computing the belief-MDP optimum.
    pub value_tolerance: f64,
    pub output_dir: PathBuf,
    pub belief: BeliefSettings,
    pub certify: CertifySettings,
    pub verify: VerifySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            instance: InstanceChoice::default(),
            seeds: (0..5).collect(),
            learner: LearnerConfig::default(),
            data: DataConfig::default(),
            value_tolerance: 1e-6,
            output_dir: PathBuf::from("out"),
            belief: BeliefSettings::default(),
            certify: CertifySettings::default(),
            verify: VerifySettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.data.eval_episodes == 0 || self.data.train_episodes == 0 {
            return bad("episode counts must be at least 1");
        }
        if self.data.eval_length == 0 || self.data.episode_length == 0 {
            return bad("episode lengths must be at least 1");
        }
        if self.learner.state_codes == 0 || self.learner.noise_codes == 0 {
            return bad("code counts must be at least 1");
        }
        if !(self.learner.alpha >= 0.0 && self.learner.beta >= 0.0) {
            return bad("alpha and beta must be nonnegative");
        }
        if !(self.value_tolerance > 0.0) {
            return bad("value_tolerance must be positive");
        }
        self.learner.training.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.learner.alpha, 1.0);
        assert_eq!(c.learner.beta, 0.25);
    }

    #[test]
    fn round_trips_and_parses_variants() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(), c);
        let c = ExperimentConfig::from_json(
            r#"{"instance": {"random": {"sizes": {"states": 3, "noises": 2, "actions": 2, "observations": 6}, "class": "C"}},
                "seeds": [7], "certify": {"estimator": "swap"}}"#,
        )
        .unwrap();
        assert!(matches!(c.instance, InstanceChoice::Random { invertible: true, .. }));
        assert_eq!(c.certify.estimator, EstimatorChoice::Swap);
        let tb1 = ExperimentConfig::from_json(r#"{"instance": {"fixture": "TB1"}}"#).unwrap();
        assert_eq!(tb1.instance, InstanceChoice::Fixture(Fixture::Tb1));
    }

    #[test]
    fn invalid_documents_are_config_errors() {
        for text in [r#"{"seeds": []}"#, r#"{"data": {"eval_episodes": 0}}"#, r#"{"bogus": 1}"#, "not json"] {
            let r = ExperimentConfig::from_json(text);
            if text.contains("bogus") {
                // Unknown keys are tolerated.
                assert!(r.is_ok());
            } else {
                assert!(matches!(r, Err(Error::Config(_))), "{}", text);
            }
        }
    }
}
