//! Value iteration, bisimulation and the redundancy check on the state-level MDP
//! under a fixture, then the same check after cloning a state.
//!
//!     cargo run --release --example exact_solver

use belief_ident::pomdp::{make_fixture, Fixture};
use belief_ident::solver::{bisimulation_partition, no_redundancy_check, value_iteration, BISIM_EPS, DEFAULT_TOL};

fn main() -> belief_ident::Result<()> {
    let grid = make_fixture(Fixture::GridNoise, 0)?;
    let mdp = grid.underlying_mdp();
    let (v, policy) = value_iteration(&mdp, DEFAULT_TOL)?;
    println!("GRIDNOISE values {:.4?}", v.values);
    println!("greedy policy    {:?} (1 = right)", policy);

    let report = no_redundancy_check(&mdp, 16, 0)?;
    println!("every pair distinguishable: {}", report.all_distinct());
    for d in report.distinct.iter().take(3) {
        println!("  {:?}", d);
    }

    // A copy of cell 3 is bisimilar to the original, hence redundant.
    let cloned = mdp.duplicate_state(3);
    let partition = bisimulation_partition(&cloned, BISIM_EPS);
    println!("\nwith cell 3 duplicated, blocks {:?}", partition.blocks());
    let report = no_redundancy_check(&cloned, 16, 0)?;
    println!("redundant pairs {:?}", report.redundant);
    Ok(())
}
