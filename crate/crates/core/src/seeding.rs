//! Derived seeds: every independent stream (restart, scan point, trial) gets
//! a seed computed from the base seed and its coordinates, so results do not
//! depend on execution order.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the stream at `coords` below `base`.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}
