//! Command-line front end. Every subcommand reads the same JSON config and
//! writes under its `output_dir`.
//!
//! Exit codes: 0 success, 1 check failure or runtime error, 2 usage or config error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use belief_ident::belief::{belief_value, build_belief_mdp, observed_start_value, BeliefMdpConfig};
use belief_ident::harness::{
    evaluate_model, run_ablation_grid, run_experiment, seed_dir, train_seed, verify_suite, ExperimentConfig,
    VerifyOptions,
};
use belief_ident::identifiability::{certify_disentanglement, search_estimators};
use belief_ident::learner::{write_loss_curve, LearnedWorldModel};
use belief_ident::solver::{no_redundancy_check, value_iteration, DEFAULT_TOL};
use belief_ident::{Error, Result};

#[derive(Parser)]
#[command(name = "belief-ident", version, about = "Belief filtering, identifiability checks and world-model training")]
struct Cli {
    /// JSON experiment config; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces the config's seed list (and instance seed) with this one seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the configured instance and write `pomdp.json`.
    Gen,
    /// Solve the underlying MDP and classify state redundancy.
    Solve,
    /// Build and solve the reachable belief-MDP.
    Belief,
    /// Certify the configured estimator; fails unless it is certified.
    Certify,
    /// Enumerate every certified factorization.
    Search,
    /// Train one world model per seed.
    Train,
    /// Evaluate a saved model, or train and evaluate every seed.
    Eval {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the four-variant ablation grid.
    Ablate,
    /// Run the invariant suite on the configured fixtures.
    Verify,
}

enum Outcome {
    Ok,
    CheckFailed,
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn first_seed(c: &ExperimentConfig) -> u64 {
    c.seeds[0]
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seeds = vec![s];
    }
    let seed = first_seed(&config);
    let out = config.output_dir.clone();

    match cli.command {
        Command::Gen => {
            let p = config.instance.build(seed)?;
            fs::create_dir_all(&out)?;
            p.save(out.join("pomdp.json"))?;
            println!(
                "|S|={} |Z|={} |A|={} |O|={} class {:?} invertible {}",
                p.sizes.states, p.sizes.noises, p.sizes.actions, p.sizes.observations, p.noise_transition.class, p.invertible
            );
        }
        Command::Solve => {
            let p = config.instance.build(seed)?;
            let mdp = p.underlying_mdp();
            let (v, policy) = value_iteration(&mdp, DEFAULT_TOL)?;
            let redundancy = no_redundancy_check(&mdp, 16, seed)?;
            println!("values {:?}\npolicy {:?}\nall states distinct: {}", v.values, policy, redundancy.all_distinct());
            write_json(&out, "solve.json", &json!({ "values": v, "policy": policy, "redundancy": redundancy }))?;
            if !redundancy.all_distinct() {
                return Ok(Outcome::CheckFailed);
            }
        }
        Command::Belief => {
            let p = config.instance.build(seed)?;
            let mut bc = BeliefMdpConfig::for_pomdp(&p, config.belief.horizon_cap);
            bc.node_cap = config.belief.node_cap;
            if let Some(q) = config.belief.quantization {
                bc.quantization = q;
            }
            let bmdp = build_belief_mdp(&p, bc)?;
            let v = belief_value(&bmdp, 1e-10)?;
            let summary = json!({
                "nodes": bmdp.len(),
                "horizon_cap": bc.horizon_cap,
                "quantization": bc.quantization,
                "initial_value": v.values[bmdp.initial],
                "observed_start_value": observed_start_value(&bmdp, &v.values),
                "truncation_bound": bmdp.truncation_bound(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            write_json(&out, "belief.json", &summary)?;
        }
        Command::Certify => {
            let p = config.instance.build(seed)?;
            let g = config.certify.estimator.build(&p)?;
            let report = certify_disentanglement(&p, &g, config.certify.tolerances, config.certify.mode)?;
            print!("{}", report.summary());
            write_json(&out, "certification.json", &report)?;
            if !report.is_certified() {
                return Ok(Outcome::CheckFailed);
            }
        }
        Command::Search => {
            let p = config.instance.build(seed)?;
            let result = search_estimators(&p, config.certify.mode, config.certify.tolerances)?;
            println!("{} certified factorization(s)", result.certified.len());
            for g in &result.certified {
                let map: Vec<(usize, usize)> = (0..g.observations()).map(|o| (g.state_of(o), g.noise_of(o))).collect();
                println!("  {:?}", map);
            }
            write_json(&out, "search.json", &result)?;
            if result.certified.is_empty() {
                return Ok(Outcome::CheckFailed);
            }
        }
        Command::Train => {
            for &s in &config.seeds {
                let p = config.instance.build(s)?;
                let (model, curve) = train_seed(&p, &config, s)?;
                let dir = seed_dir(&config, s);
                fs::create_dir_all(&dir)?;
                model.write_json(&dir.join("model.json"))?;
                write_loss_curve(&dir.join("loss.csv"), &curve)?;
                let last = curve.last().expect("curve has a final row");
                println!("seed {}: loss {:.6} -> {:.6}", s, curve[0].total, last.total);
            }
        }
        Command::Eval { model: Some(path) } => {
            let model = LearnedWorldModel::read_json(&path)?;
            let p = config.instance.build(seed)?;
            let e = evaluate_model(&p, &model, &config, seed)?;
            println!(
                "mi_s {:.4}  mi_z {:.4}  return {:.4} ± {:.4}  optimum {:.4}",
                e.row.mi_s_hat_vs_s, e.row.mi_z_hat_vs_s, e.row.mean_return, e.row.std_return, e.optimum
            );
            write_json(&out, "eval.json", &e)?;
        }
        Command::Eval { model: None } => {
            let r = run_experiment(&config)?;
            for row in &r.rows {
                println!(
                    "seed {}: mi_s {:.4}  mi_z {:.4}  return {:.4}  gap {:.4}",
                    row.seed, row.mi_s_hat_vs_s, row.mi_z_hat_vs_s, row.mean_return, row.value_gap
                );
            }
            println!("metrics written to {}", out.join("metrics.csv").display());
        }
        Command::Ablate => {
            let r = run_ablation_grid(&config)?;
            println!("{:<10} {:>12} {:>10} {:>10}", "variant", "median_ret", "mi_s", "mi_z");
            for v in &r.variants {
                println!(
                    "{:<10} {:>12.4} {:>10.4} {:>10.4}",
                    v.variant.name(), v.median_return, v.median_mi_s, v.median_mi_z
                );
            }
        }
        Command::Verify => {
            let report = verify_suite(&VerifyOptions::from_settings(&config.verify, seed))?;
            report.write(&out)?;
            for c in report.failures() {
                println!("FAIL {} {}: {:.3e} (threshold {:.3e})", c.fixture, c.check, c.value, c.threshold);
            }
            println!("{} checks, {} failed", report.checks.len(), report.failures().count());
            if !report.passed {
                return Ok(Outcome::CheckFailed);
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", e);
            match e {
                Error::Config(_) | Error::UnknownFixture(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
