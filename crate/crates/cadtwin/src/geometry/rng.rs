//! Counter-based deterministic PRNG. Every draw is a pure function of
//! `(seed, index, slot)`, so sampling is reproducible bitwise across
//! platforms and trivially parallelizable.

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Raw 64-bit hash of the counter triple.
#[inline]
pub fn hash(seed: u64, index: u64, slot: u64) -> u64 {
    splitmix64(splitmix64(seed ^ 0xA076_1D64_78BD_642F) ^ splitmix64(index.wrapping_mul(0xE703_7ED1_A0B4_28DB) ^ slot.wrapping_mul(0x8EBC_6AF0_9C88_C6E3)))
}

/// Uniform draw in [0, 1).
#[inline]
pub fn uniform(seed: u64, index: u64, slot: u64) -> f64 {
    (hash(seed, index, slot) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal via Box-Muller on two counter draws.
pub fn normal(seed: u64, index: u64, slot: u64) -> f64 {
    let u1 = uniform(seed, index, 2 * slot).max(1e-300);
    let u2 = uniform(seed, index, 2 * slot + 1);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
