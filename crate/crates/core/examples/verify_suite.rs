//! Run the invariant suite on the default fixtures, then again with a reward
//! fault injected into TB1.
//!
//!     cargo run --release --example verify_suite

use belief_ident::harness::{verify_suite, VerifyOptions};
use belief_ident::pomdp::Fixture;

fn main() -> belief_ident::Result<()> {
    let report = verify_suite(&VerifyOptions::default())?;
    for c in &report.checks {
        println!(
            "{} {:<9} {:<30} {:.3e} {:?} {:.3e}",
            if c.passed { "ok  " } else { "FAIL" },
            c.fixture.name(),
            c.check,
            c.value,
            c.requirement,
            c.threshold
        );
    }

    let faulty = verify_suite(&VerifyOptions {
        fixtures: vec![Fixture::Tb1],
        inject_fault: true,
        ..VerifyOptions::default()
    })?;
    println!("\nwith an injected TB1 reward fault:");
    for c in faulty.failures() {
        println!("  caught {} = {:.3e}", c.check, c.value);
    }
    Ok(())
}
