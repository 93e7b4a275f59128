//! Counter-based random values: every draw is a pure function of its key.
//!
//! Keys are folded through the SplitMix64 finalizer, so any single value of
//! a synthetic landscape can be recomputed without replaying a stream.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn fmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a sequence of words into one 64-bit value.
pub fn hash_words(words: &[u64]) -> u64 {
    let mut h = fmix(words.len() as u64 ^ GOLDEN);
    for &w in words {
        h = fmix(h.wrapping_add(GOLDEN) ^ fmix(w.wrapping_add(GOLDEN)));
    }
    h
}

/// Stable 64-bit hash of a string (FNV-1a, then mixed).
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    fmix(h)
}

/// Uniform in [0, 1) with 53 bits of precision.
pub fn uniform(words: &[u64]) -> f64 {
    (hash_words(words) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal by Box-Muller over two keyed uniforms.
pub fn standard_normal(words: &[u64]) -> f64 {
    let mut key = words.to_vec();
    key.push(0);
    let u1 = uniform(&key);
    *key.last_mut().unwrap() = 1;
    let u2 = uniform(&key);
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
