//! Seeded random-number streams.
//!
//! Every source of randomness in the crate flows from a single master seed
//! through named sub-streams, so that independent stages (data sampling,
//! weight init, goal schedules, softmax draws, ...) can be reproduced in
//! isolation and so that reordering one stage never perturbs another.
//! A sub-stream is a ChaCha8 generator keyed by the master seed plus a hash
//! of the stream name.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// 64-bit FNV-1a hash of a byte string. Used only to derive distinct RNG
/// seeds from stream names; not a cryptographic hash.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic RNG for the sub-stream `name` of the given master seed.
///
/// Distinct names yield independent streams; the same `(master_seed, name)`
/// pair always yields the same stream.
pub fn substream(master_seed: u64, name: &str) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&fnv1a64(name.as_bytes()).to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}
