//! Small shared helpers: stable hashing, deterministic parallel maps.

/// FNV-1a 64-bit over bytes, optionally seeded.
pub fn fnv1a64(bytes: &[u8], seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stable, well-mixed 64-bit hash: FNV-1a with a murmur-style finalizer.
///
/// Used wherever a hash must be identical across runs, platforms, and Rust
/// versions (`std::hash` makes no such guarantee). The finalizer matters:
/// raw FNV has almost no avalanche on trailing bytes, so tokens sharing a
/// long prefix ("src/io0", "src/io1", ...) land in correlated buckets.
pub fn stable_hash64(bytes: &[u8], seed: u64) -> u64 {
    let mut h = fnv1a64(bytes, seed);
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

/// Map over items, in parallel when the `parallel` feature is enabled.
/// Output order always matches input order regardless of scheduling.
#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Send + Sync,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}
