//! Deterministic random streams.
//!
//! Every replication and every purpose inside a replication gets its own
//! ChaCha stream. The key is derived from the base seed and a purpose tag;
//! the replication index selects the ChaCha stream id, so draws never
//! depend on scheduling order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Purpose tags for sub-streams of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Data = 1,
    Chain = 2,
    Prior = 3,
    Aux = 4,
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finaliser
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` under `base`, reported in per-replication records.
pub fn replication_seed(base: u64, index: usize) -> u64 {
    mix(base ^ mix(index as u64))
}

/// Stream for `(base, replication, purpose)`.
pub fn stream(base: u64, replication: usize, purpose: Purpose) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(mix(base.wrapping_add(purpose as u64)));
    rng.set_stream(replication as u64);
    rng
}

/// Stream for `purpose` inside the replication whose reported seed is `seed`.
/// Rerunning a replication needs nothing but that seed.
pub fn replication_stream(seed: u64, purpose: Purpose) -> ChaCha20Rng {
    stream(seed, 0, purpose)
}

/// Single stream from a bare seed.
pub fn seeded(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
