//! Exact Bayes filtering on TB2, the state/noise split of the belief, and the
//! value of the reachable belief-MDP.
//!
//!     cargo run --release --example belief_filtering

use belief_ident::belief::{
    belief_update, belief_value, build_belief_mdp, condition_on_observation, observed_start_value, BeliefMdpConfig,
    FactoredBelief,
};
use belief_ident::pomdp::{make_fixture, Fixture, FLIP, STAY};

fn show(label: &str, b: &FactoredBelief) {
    println!("{:<18} b(s) {:.4?}  b(z|s) {:.4?}", label, b.state_marginal, b.noise_conditional);
}

fn main() -> belief_ident::Result<()> {
    let p = make_fixture(Fixture::Tb2, 0)?;
    let prior = FactoredBelief::initial(&p);
    show("prior", &prior);
    let (mut b, prob) = condition_on_observation(&p, &prior, 3)?;
    show("after o=3", &b);
    println!("{:<18} p(o=3) = {:.4}", "", prob);
    for (a, o) in [(STAY, 3), (FLIP, 0), (STAY, 1)] {
        let (next, prob) = belief_update(&p, &b, a, o)?;
        b = next;
        show(&format!("a={} o={}", a, o), &b);
        println!("{:<18} p(o | history) = {:.4}", "", prob);
    }

    for fixture in [Fixture::Tb1, Fixture::Tb2] {
        let p = make_fixture(fixture, 0)?;
        let bmdp = build_belief_mdp(&p, BeliefMdpConfig::for_pomdp(&p, 6))?;
        let v = belief_value(&bmdp, 1e-10)?;
        println!(
            "\n{} belief-MDP, cap 6: {} nodes, V(prior) {:.4}, value after o_0 {:.4}, truncation bound {:.3}",
            fixture,
            bmdp.len(),
            v.values[bmdp.initial],
            observed_start_value(&bmdp, &v.values),
            bmdp.truncation_bound()
        );
    }
    Ok(())
}
