//! Deterministic sub-seed derivation.
//!
//! Every stage draws its randomness from a single user-supplied 64-bit seed
//! through the mixers below, so results never depend on ambient entropy,
//! hash-map iteration order or the platform's default hasher.

/// SplitMix64 finalizer; full-period mixing of a 64-bit state.
pub fn splitmix64(mut state: u64) -> u64 {
    state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over raw bytes; stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Sub-seed for the `index`-th consumer of `seed` under a named stream.
pub fn derive(seed: u64, stream: &str, index: u64) -> u64 {
    let tag = fnv1a64(stream.as_bytes());
    splitmix64(seed ^ tag.rotate_left(17) ^ index.wrapping_mul(0xA24B_AED4_963E_E407))
}
