//! Small shared helpers: stable hashing for seed derivation and RNG
//! construction.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over raw bytes. Stable across platforms and releases, unlike the
/// std hasher, so derived seeds can be persisted and replayed.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a per-group seed from a global seed and a string key.
pub fn derive_seed(global_seed: u64, key: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + key.len());
    buf.extend_from_slice(&global_seed.to_le_bytes());
    buf.extend_from_slice(key.as_bytes());
    fnv1a64(&buf)
}

/// Derives a per-(id, epoch) seed for schedule-independent epoch planning.
pub fn derive_seed_epoch(global_seed: u64, id: &str, epoch: u64) -> u64 {
    let mut buf = Vec::with_capacity(16 + id.len());
    buf.extend_from_slice(&global_seed.to_le_bytes());
    buf.extend_from_slice(id.as_bytes());
    buf.extend_from_slice(&epoch.to_le_bytes());
    fnv1a64(&buf)
}

/// The one RNG used everywhere randomness is needed; seeded explicitly.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
