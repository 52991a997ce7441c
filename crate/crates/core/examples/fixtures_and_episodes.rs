//! Build the named fixtures and a random instance, sample a few episodes and
//! round-trip one instance through JSON.
//!
//!     cargo run --release --example fixtures_and_episodes

use belief_ident::pomdp::{
    generate_random, make_fixture, sample_episode, EpisodeStart, FactoredPomdp, Fixture, NoiseClass, Policy,
    RandomInstance, Sizes, UniformController, RIGHT,
};

fn describe(name: &str, p: &FactoredPomdp) {
    println!(
        "{:<10} |S|={} |Z|={} |A|={} |O|={} noise class {:?} bijective {}",
        name, p.sizes.states, p.sizes.noises, p.sizes.actions, p.sizes.observations, p.noise_transition.class, p.invertible
    );
}

fn main() -> belief_ident::Result<()> {
    for f in [Fixture::Tb1, Fixture::Tb2, Fixture::GridNoise] {
        describe(f.name(), &make_fixture(f, 0)?);
    }
    let random = generate_random(&RandomInstance {
        sizes: Sizes::new(3, 2, 2, 6),
        class: NoiseClass::D,
        invertible: true,
        seed: 7,
    })?;
    describe("random", &random);

    let grid = make_fixture(Fixture::GridNoise, 0)?;
    let mut explorer = UniformController { actions: grid.sizes.actions };
    let e = sample_episode(&grid, &mut explorer, 12, EpisodeStart::Initial, 1)?;
    println!("\nuniform controller on GRIDNOISE:");
    println!("  states       {:?}", e.steps.iter().map(|s| s.state).collect::<Vec<_>>());
    println!("  distractor   {:?}", e.steps.iter().map(|s| s.noise).collect::<Vec<_>>());
    println!("  observations {:?}", e.steps.iter().map(|s| s.observation).collect::<Vec<_>>());
    println!("  return {:.4}", e.discounted_return(grid.discount));

    let mut right = Policy::constant(grid.sizes.states, RIGHT);
    let e = sample_episode(&grid, &mut right, 12, EpisodeStart::Fixed { state: 0, noise: 0 }, 1)?;
    println!("always-right from cell 0: return {:.4}", e.discounted_return(grid.discount));

    let back = FactoredPomdp::from_json(&random.to_json()?)?;
    println!("\nJSON round trip preserves the instance: {}", back == random);
    Ok(())
}
