//! Deterministic sub-seed derivation.
//!
//! Every randomized stage derives its own stream from a named base seed,
//! so parallel and serial execution draw identical values and reruns are
//! bit-identical across platforms.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a byte string.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a base seed, a stream tag, and an index.
pub fn derive(base: u64, tag: &str, index: u64) -> u64 {
    mix(mix(base ^ fnv1a(tag.as_bytes())) ^ index)
}

/// Derive a child seed keyed by a string identity (e.g. a series id).
pub fn derive_keyed(base: u64, tag: &str, key: &str) -> u64 {
    derive(base, tag, fnv1a(key.as_bytes()))
}
