//! Deterministic seed derivation.
//!
//! Every stochastic consumer (parameter init, batch shuffling, dropout, route
//! sampling, noise, ...) pulls from its own named stream derived from the run
//! seed. Jobs stay reproducible regardless of how many other streams exist or
//! how work is scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive a child seed from a base seed and a label.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut state = splitmix64(base ^ 0x6A09_E667_F3BC_C909);
    for &byte in tag.as_bytes() {
        state = splitmix64(state ^ u64::from(byte));
    }
    state
}

/// Seeded RNG for the named stream.
pub fn stream(base: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}
