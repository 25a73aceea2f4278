//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] derived from a
//! single experiment seed plus a stream name, so independent consumers
//! (demo generation, rollouts, minibatching, initialization) never share or
//! perturb each other's sequences.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng as Rng;

/// Named substream of `seed`. The name selects the ChaCha stream id.
pub fn substream(seed: u64, name: &str) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Child stream of `seed` for the `index`-th member of a named family.
pub fn indexed_substream(seed: u64, name: &str, index: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
