//! Named, seeded random streams.
//!
//! Every consumer of randomness receives its own ChaCha stream derived from a
//! root seed and a stream name such as `"pretrain/batch"`. Streams are
//! independent of each other, so an ablation that draws more numbers from one
//! stream leaves every other stream untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derive the stream `name` from `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}

/// Plain seeded stream, for tests and one-off draws.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
