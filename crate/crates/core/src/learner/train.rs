use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pomdp::Episode;
use crate::{Error, Result};

use super::model::LearnedWorldModel;
use super::objective::{elbo, elbo_gradients, LossBreakdown, ObjectiveSwitches};

/// Consecutive worsening steps tolerated before the step size is halved (once) and
/// then training is abandoned.
pub const DIVERGENCE_WINDOW: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub step_size: f64,
    pub step_count: usize,
    /// Seeds the model initialisation.
    pub seed: u64,
    pub switches: ObjectiveSwitches,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            step_size: 0.05,
            step_count: 20_000,
            seed: 0,
            switches: ObjectiveSwitches::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step_size must be positive, got {}", self.step_size)));
        }
        Ok(())
    }
}

/// One row of the loss curve: the loss of the parameters held before update `step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub total: f64,
    pub recon_o: f64,
    pub recon_r: f64,
    pub kl_s: f64,
    pub kl_z: f64,
}

impl LossPoint {
    fn new(step: usize, b: &LossBreakdown) -> Self {
        LossPoint {
            step,
            total: b.total,
            recon_o: b.recon_o,
            recon_r: b.recon_r,
            kl_s: b.kl_s,
            kl_z: b.kl_z,
        }
    }
}

/// Full-batch gradient descent on the negative ELBO. The curve has one row per
/// update plus a final row for the returned model.
pub fn train(
    model: &LearnedWorldModel,
    episodes: &[Episode],
    config: &TrainingConfig,
) -> Result<(LearnedWorldModel, Vec<LossPoint>)> {
    config.validate()?;
    let mut model = model.clone();
    let mut step_size = config.step_size;
    let mut curve = Vec::with_capacity(config.step_count + 1);
    let mut previous = f64::INFINITY;
    let mut worse = 0;
    let mut halved = false;
    for step in 0..config.step_count {
        let (loss, grad) = elbo_gradients(&model, episodes, &config.switches)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                step,
                window: 0,
                step_size,
            });
        }
        curve.push(LossPoint::new(step, &loss));
        if loss.total > previous {
            worse += 1;
            if worse >= DIVERGENCE_WINDOW {
                if halved {
                    return Err(Error::Diverged {
                        step,
                        window: DIVERGENCE_WINDOW,
                        step_size,
                    });
                }
                step_size /= 2.0;
                halved = true;
                worse = 0;
            }
        } else {
            worse = 0;
        }
        previous = loss.total;
        model.params.add_scaled(&grad, -step_size);
    }
    let last = elbo(&model, episodes, &config.switches)?;
    curve.push(LossPoint::new(config.step_count, &last));
    Ok((model, curve))
}

/// CSV with header `step,total,recon_o,recon_r,kl_s,kl_z`.
pub fn write_loss_curve(path: &Path, curve: &[LossPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::model::{init_model, ModelShape};
    use crate::pomdp::{make_fixture, sample_episode, EpisodeStart, Fixture, UniformController};

    fn setup(steps: usize) -> (LearnedWorldModel, Vec<Episode>, TrainingConfig) {
        let p = make_fixture(Fixture::Tb1, 0).unwrap();
        let mut c = UniformController { actions: p.sizes.actions };
        let eps = (0..6)
            .map(|s| sample_episode(&p, &mut c, 10, EpisodeStart::Initial, s).unwrap())
            .collect();
        let shape = ModelShape::for_pomdp(&p, 4, 3, Default::default());
        let config = TrainingConfig {
            step_count: steps,
            ..TrainingConfig::default()
        };
        (init_model(shape, 1).unwrap(), eps, config)
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let (m, eps, config) = setup(200);
        let (a, curve) = train(&m, &eps, &config).unwrap();
        let (b, again) = train(&m, &eps, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(curve, again);
        assert_eq!(curve.len(), 201);
        assert_eq!(curve.last().unwrap().step, 200);
        assert!(curve.last().unwrap().total < curve[0].total - 1.0);
    }

    #[test]
    fn divergence_is_reported() {
        let (m, eps, mut config) = setup(2000);
        config.step_size = 1e6;
        assert!(matches!(train(&m, &eps, &config), Err(Error::Diverged { .. })));
        config.step_size = 0.0;
        assert!(matches!(train(&m, &eps, &config), Err(Error::Config(_))));
    }

    #[test]
    fn loss_curve_has_named_columns() {
        let (m, eps, config) = setup(3);
        let (_, curve) = train(&m, &eps, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        write_loss_curve(&path, &curve).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("step,total,recon_o,recon_r,kl_s,kl_z\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
