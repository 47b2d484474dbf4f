//! Seeded random streams. Every random draw in the crate goes through
//! [`stream_rng`], so a `(seed, stream)` pair reproduces it exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
