//! Per-purpose random streams derived from one 64-bit seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a, stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Independent generator for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: &str, index: u64) -> ChaCha8Rng {
    let k = splitmix64(seed ^ splitmix64(fnv1a(purpose.as_bytes()) ^ splitmix64(index)));
    ChaCha8Rng::seed_from_u64(k)
}
