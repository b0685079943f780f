//! Seeded substream derivation.
//!
//! Every stochastic routine in this crate draws from a `ChaCha12Rng` whose
//! 64-bit seed is derived from a user seed plus a path of integer ids
//! (replication index, channel, block index, ...). The derivation chain is
//! SplitMix64-based, so substreams are deterministic functions of
//! `(seed, path)` and independent of thread scheduling.
//!
//! Generator identity (pinned): `rand_chacha::ChaCha12Rng`, keyed through
//! `SeedableRng::seed_from_u64`; standard normals come from
//! `rand_distr::StandardNormal` (ziggurat). Versions are fixed by the
//! workspace lockfile.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// SplitMix64 output function.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a path of ids into a root seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut s = splitmix64(seed);
    for &id in path {
        s = splitmix64(s ^ id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    s
}

/// Deterministic substream for `(seed, path)`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(seed, path))
}
