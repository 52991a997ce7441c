//! Certify candidate observation-level estimators on TB1, search for every
//! certified factorization, and run the belief-level check on TB2.
//!
//!     cargo run --release --example certify_estimators

use belief_ident::belief::{build_belief_mdp, BeliefMdpConfig};
use belief_ident::identifiability::{
    check_belief_preservation, certify_disentanglement, search_estimators, BeliefFactorizer, ObservationEstimator,
    Tolerances, TransitionMode,
};
use belief_ident::pomdp::{make_fixture, Fixture};

fn main() -> belief_ident::Result<()> {
    let p = make_fixture(Fixture::Tb1, 0)?;
    let candidates = [
        ("ground truth", ObservationEstimator::identity(&p)?),
        ("swap", ObservationEstimator::swap(&p)?),
        ("xor", ObservationEstimator::xor(&p)?),
    ];
    for (name, g) in &candidates {
        let r = certify_disentanglement(&p, g, Tolerances::default(), TransitionMode::Strict)?;
        println!("== {}\n{}", name, r.summary());
    }

    let found = search_estimators(&p, TransitionMode::Strict, Tolerances::default())?;
    println!("search on TB1 finds {} class(es) of certified estimators", found.certified.len());

    // TB2's emission is not bijective, so only the belief-level check applies.
    let tb2 = make_fixture(Fixture::Tb2, 0)?;
    let bmdp = build_belief_mdp(&tb2, BeliefMdpConfig::for_pomdp(&tb2, 5))?;
    let truth = check_belief_preservation(&bmdp, &BeliefFactorizer::ground_truth(&bmdp))?;
    let swapped = check_belief_preservation(&bmdp, &BeliefFactorizer::swapped(&bmdp))?;
    println!("\nTB2 belief-level residuals at cap 5: ground truth {:.4}, swapped {:.4}", truth, swapped);
    Ok(())
}
