use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Result;

use super::config::ExperimentConfig;
use super::experiment::{run_experiment, ExperimentReport};
use super::metrics::median;

/// The four objective variants compared on identical seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Both channels decoded from the joint code.
    Symmetric,
    NoReward,
    NoKl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Symmetric, Variant::NoReward, Variant::NoKl];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Symmetric => "symmetric",
            Variant::NoReward => "no_reward",
            Variant::NoKl => "no_kl",
        }
    }

    /// The base config with this variant's switches, writing to `<output_dir>/<name>`.
    /// Switches already off in the base stay off.
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        let sw = &mut c.learner.training.switches;
        match self {
            Variant::Full => {}
            Variant::Symmetric => sw.asymmetric_emission = false,
            Variant::NoReward => sw.use_reward_term = false,
            Variant::NoKl => sw.use_kl_terms = false,
        }
        c.output_dir = base.output_dir.join(self.name());
        c
    }
}

pub fn run_variant(base: &ExperimentConfig, variant: Variant) -> Result<ExperimentReport> {
    run_experiment(&variant.apply(base))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub seeds: usize,
    pub median_return: f64,
    pub median_mi_s: f64,
    pub median_mi_z: f64,
    /// Seeds whose model passed the channel-1 permutation test.
    pub asymmetry_passed: usize,
    /// Largest KL value on any loss curve of the variant.
    pub max_kl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub seed: u64,
    pub mi_s_hat_vs_s: f64,
    pub mi_z_hat_vs_s: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub asymmetry_passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub variants: Vec<VariantSummary>,
}

impl AblationReport {
    pub fn from_runs(runs: &[(Variant, &ExperimentReport)]) -> Self {
        let mut rows = Vec::new();
        let mut variants = Vec::new();
        for (variant, report) in runs {
            let col = |f: fn(&crate::harness::MetricsRow) -> f64| median(&report.rows.iter().map(f).collect::<Vec<_>>());
            for o in &report.outcomes {
                let r = &o.evaluation.row;
                rows.push(AblationRow {
                    variant: *variant,
                    seed: r.seed,
                    mi_s_hat_vs_s: r.mi_s_hat_vs_s,
                    mi_z_hat_vs_s: r.mi_z_hat_vs_s,
                    mean_return: r.mean_return,
                    std_return: r.std_return,
                    asymmetry_passed: o.evaluation.asymmetry.passed,
                });
            }
            variants.push(VariantSummary {
                variant: *variant,
                seeds: report.rows.len(),
                median_return: col(|r| r.mean_return),
                median_mi_s: col(|r| r.mi_s_hat_vs_s),
                median_mi_z: col(|r| r.mi_z_hat_vs_s),
                asymmetry_passed: report.outcomes.iter().filter(|o| o.evaluation.asymmetry.passed).count(),
                max_kl: report.outcomes.iter().fold(0.0, |m, o| o.max_kl.max(m)),
            });
        }
        AblationReport { rows, variants }
    }

    pub fn summary(&self, variant: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.variant == variant)
    }

    /// `ablation.csv` (one row per variant and seed), `ablation_summary.csv` and `ablation.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("ablation_summary.csv"))?;
        for v in &self.variants {
            w.serialize(v)?;
        }
        w.flush()?;
        fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Runs all four variants over the config's seeds and writes the comparison tables.
pub fn run_ablation_grid(base: &ExperimentConfig) -> Result<AblationReport> {
    let reports = Variant::ALL
        .iter()
        .map(|&v| run_variant(base, v))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<(Variant, &ExperimentReport)> = Variant::ALL.iter().copied().zip(reports.iter()).collect();
    let report = AblationReport::from_runs(&runs);
    report.write(&base.output_dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::InstanceChoice;
    use crate::pomdp::Fixture;

    #[test]
    fn grid_runs_every_variant_on_the_same_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig {
            instance: InstanceChoice::Fixture(Fixture::Tb1),
            seeds: vec![4],
            output_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        c.learner.state_codes = 2;
        c.learner.noise_codes = 2;
        c.learner.training.step_count = 20;
        c.data.train_episodes = 4;
        c.data.episode_length = 8;
        c.data.eval_episodes = 3;
        c.data.eval_length = 8;
        let r = run_ablation_grid(&c).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.rows.iter().all(|row| row.seed == 4));
        assert_eq!(r.summary(Variant::NoKl).unwrap().max_kl, 0.0);
        assert!(r.summary(Variant::Full).unwrap().max_kl > 0.0);
        assert_eq!(r.summary(Variant::Full).unwrap().asymmetry_passed, 1);
        assert_eq!(r.summary(Variant::Symmetric).unwrap().asymmetry_passed, 0);
        for v in Variant::ALL {
            assert!(dir.path().join(v.name()).join("metrics.csv").exists());
        }
        let csv = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5);
    }
}
