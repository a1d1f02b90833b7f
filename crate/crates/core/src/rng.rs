//! Seeded random streams.
//!
//! Everything random in the crate draws from ChaCha8, a counter-based
//! generator whose output is identical on every platform. Independent uses
//! of the same seed are separated by stream id.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PHANTOM_STREAM: u64 = 1;
pub const NOISE_STREAM: u64 = 2;
pub const SPLIT_STREAM: u64 = 3;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
