//! The four-variant ablation grid on GRIDNOISE with paired seeds. Writes the
//! tables under `out/ablation`.
//!
//!     cargo run --release --example ablation_grid -- [steps] [seeds]

use belief_ident::harness::{run_ablation_grid, ExperimentConfig};

fn main() -> belief_ident::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(3_000);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);

    let mut config = ExperimentConfig::default();
    config.learner.training.step_count = steps;
    config.seeds = (0..seeds).collect();
    config.output_dir = "out/ablation".into();
    let report = run_ablation_grid(&config)?;

    println!("{:<10} {:>13} {:>9} {:>9} {:>10}", "variant", "median return", "mi_s", "mi_z", "asym pass");
    for v in &report.variants {
        println!(
            "{:<10} {:>13.4} {:>9.4} {:>9.4} {:>7}/{}",
            v.variant.name(),
            v.median_return,
            v.median_mi_s,
            v.median_mi_z,
            v.asymmetry_passed,
            v.seeds
        );
    }
    Ok(())
}
