//! Deterministic RNG streams.
//!
//! Every consumer gets its own ChaCha stream keyed by (global seed, user, purpose)
//! so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::domain::UserId;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Evolution = 1,
    PreOptimize = 2,
    Clustering = 3,
    Scorer = 4,
    Candidates = 5,
    Synthetic = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, key: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream as u64) ^ key)
}

pub fn stream_rng(seed: u64, stream: Stream) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, 0))
}

pub fn user_rng(seed: u64, stream: Stream, user: UserId) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, u64::from(user.0) + 1))
}
