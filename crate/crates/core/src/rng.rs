//! Seeded, splittable random streams.
//!
//! Every consumer draws from a ChaCha20 generator keyed by the user seed and
//! a per-purpose domain; independent units of work (a dyad, a chain) get
//! their own stream number, so adding units never perturbs earlier ones.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Identifier recorded in output metadata alongside the seed.
pub const RNG_NAME: &str = "chacha20-stream/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Simulate = 1,
    Subsample = 2,
    Mcmc = 3,
}

pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha20Rng {
    let key = seed ^ (domain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha20Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream(7, Domain::Mcmc, 0).random();
        let b: u64 = stream(7, Domain::Mcmc, 0).random();
        let c: u64 = stream(7, Domain::Mcmc, 1).random();
        let d: u64 = stream(7, Domain::Simulate, 0).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
