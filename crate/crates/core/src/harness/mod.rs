//! Experiment plumbing: configuration, training and evaluation runs, the
//! ablation grid, the verification suite and report files.
//!
//! Every artifact is a deterministic function of the configuration. Seeds run
//! on scoped threads, each writing to its own subdirectory, and results are
//! gathered in seed order.

mod ablation;
mod config;
mod experiment;
mod metrics;
mod verify;

pub use ablation::{run_ablation_grid, run_variant, AblationReport, AblationRow, Variant, VariantSummary};
pub use config::{
    BeliefSettings, CertifySettings, DataConfig, EstimatorChoice, ExperimentConfig, InstanceChoice, LearnerConfig,
    VerifySettings,
};
pub use experiment::{
    belief_optimum, evaluate_model, horizon_for, induced_estimator, run_experiment, run_seed, seed_dir,
    train_seed, training_episodes, Evaluation, ExperimentReport, SeedOutcome, SeedSummary,
};
pub use metrics::{count_pairs, median, mutual_information, write_metrics_csv, Aggregate, MetricStats, MetricsRow};
pub use verify::{
    enumerate_posterior, filter_discrepancy, reward_noise_sensitivity, verify_suite, CheckResult, Requirement,
    VerifyOptions, VerifyReport, VerifyTolerances, FAULT_OFFSET,
};

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// `items.map(f)` on up to `available_parallelism` scoped threads, results in input order.
pub(crate) fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every item is processed"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let v: Vec<u64> = (0..37).collect();
        assert_eq!(parallel_map(&v, |x| x * x), v.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!(parallel_map(&[] as &[u8], |x| *x).is_empty());
    }
}
