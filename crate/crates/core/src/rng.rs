//! Counter-based random streams.
//!
//! Every consumer of randomness asks for its own stream so that adding draws in
//! one place never shifts the numbers seen by another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

pub type StreamRng = ChaCha8Rng;

/// Named stream identifiers.
pub mod streams {
    pub const GENERATE_TRANSITIONS: u64 = 1;
    pub const GENERATE_REWARDS: u64 = 2;
    pub const FIXTURE: u64 = 3;
    pub const EPISODE: u64 = 4;
    pub const MODEL_INIT: u64 = 5;
    pub const TRAIN_DATA: u64 = 6;
    pub const EVAL_GREEDY: u64 = 7;
    pub const EVAL_EXPLORE: u64 = 8;
    pub const POLICY_SAMPLE: u64 = 9;
    pub const HELD_OUT: u64 = 10;
    pub const VERIFY: u64 = 11;
}

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A draw from the symmetric Dirichlet(1) distribution on `n` categories.
pub fn dirichlet_ones<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = v.iter().sum();
    for x in &mut v {
        *x /= total;
    }
    v
}

/// Index drawn from a categorical distribution; falls back to the last
/// positive entry when rounding leaves residual mass.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
