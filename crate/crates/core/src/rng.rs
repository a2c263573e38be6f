//! Seed-derived random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream for one (iteration, node) cell of a run.
pub fn stream(seed: u64, iteration: u64, node: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((iteration << 32) ^ node);
    rng
}

/// Derives a child seed, e.g. one per replicate or per start.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
