//! Independent ChaCha streams derived from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ARRIVALS: u64 = 1;
pub const PROMPTS: u64 = 2;
pub const CENTROIDS: u64 = 3;
pub const PREWARM: u64 = 4;
pub const ROUTING: u64 = 5;
pub const POLICY: u64 = 6;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
