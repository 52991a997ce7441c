//! Train the tabular world model on GRIDNOISE and evaluate it: mutual
//! information of the codes with the true cell, and greedy return against the
//! belief-MDP optimum.
//!
//!     cargo run --release --example train_world_model -- [seed] [steps]

use belief_ident::harness::{evaluate_model, train_seed, ExperimentConfig};
use belief_ident::learner::extract_latent_mdp;

fn main() -> belief_ident::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20_000);

    let mut config = ExperimentConfig::default();
    config.learner.training.step_count = steps;
    let p = config.instance.build(seed)?;
    let (model, curve) = train_seed(&p, &config, seed)?;
    for q in curve.iter().step_by((steps / 5).max(1)).chain(curve.last()) {
        println!(
            "step {:>6}  loss {:>9.4}  obs {:>8.4}  reward {:>8.4}  kl_s {:.4}  kl_z {:.4}",
            q.step, q.total, q.recon_o, q.recon_r, q.kl_s, q.kl_z
        );
    }

    let latent = extract_latent_mdp(&model, p.discount)?;
    println!("\nlatent reward for (code 0, right) {:.3?}", latent.reward[0][1]);
    let e = evaluate_model(&p, &model, &config, seed)?;
    println!("I(s_hat; s) = {:.4} nats (ln 4 = {:.4})", e.row.mi_s_hat_vs_s, 4f64.ln());
    println!("I(z_hat; s) = {:.4} nats", e.row.mi_z_hat_vs_s);
    println!(
        "greedy policy {:?}, return {:.4} ± {:.4}, optimum {:.4} ({:.1}%)",
        e.policy,
        e.row.mean_return,
        e.row.std_return,
        e.optimum,
        100.0 * e.row.mean_return / e.optimum
    );
    println!("channel-1 permutation test passed: {}", e.asymmetry.passed);
    Ok(())
}
