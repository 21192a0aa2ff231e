//! Seeded random streams.
//!
//! Every stochastic routine draws from ChaCha8 (`rand_chacha::ChaCha8Rng`)
//! seeded with `seed_from_u64(seed)` and a fixed stream id per purpose, so that
//! consumers of one stream never perturb another.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

pub const STREAM_TOY: u64 = 1;
pub const STREAM_INIT: u64 = 2;
pub const STREAM_SHUFFLE: u64 = 3;
pub const STREAM_MIXUP: u64 = 4;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
