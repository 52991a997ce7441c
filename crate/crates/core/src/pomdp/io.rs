//! JSON document format for POMDPs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Result;

use super::{Channels, FactoredPomdp, NoiseClass, NoiseTransition, Sizes};

/// On-disk layout. `noise_transition` lists one row per conditioning tuple of
/// `decomposition_class`, in that class's row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PomdpFile {
    pub sizes: Sizes,
    pub decomposition_class: NoiseClass,
    pub state_transition: Vec<Vec<Vec<f64>>>,
    pub noise_transition: Vec<Vec<f64>>,
    pub emission: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
    pub initial_belief: Vec<f64>,
    pub invertible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<Channels>,
}

impl From<&FactoredPomdp> for PomdpFile {
    fn from(p: &FactoredPomdp) -> Self {
        PomdpFile {
            sizes: p.sizes,
            decomposition_class: p.noise_transition.class,
            state_transition: p.state_transition.clone(),
            noise_transition: p.noise_transition.rows.clone(),
            emission: p.emission.clone(),
            reward: p.reward.clone(),
            discount: p.discount,
            initial_belief: p.initial_belief.clone(),
            invertible: p.invertible,
            channels: p.channels,
        }
    }
}

impl From<PomdpFile> for FactoredPomdp {
    fn from(f: PomdpFile) -> Self {
        FactoredPomdp {
            sizes: f.sizes,
            state_transition: f.state_transition,
            noise_transition: NoiseTransition {
                class: f.decomposition_class,
                rows: f.noise_transition,
            },
            emission: f.emission,
            reward: f.reward,
            discount: f.discount,
            initial_belief: f.initial_belief,
            invertible: f.invertible,
            channels: f.channels,
        }
    }
}

impl FactoredPomdp {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PomdpFile::from(self))?)
    }

    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: PomdpFile = serde_json::from_str(text)?;
        let pomdp = FactoredPomdp::from(file);
        pomdp.validate().into_result()?;
        Ok(pomdp)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        FactoredPomdp::from_json(&text)
    }
}
