//! Seeded random number helpers.
//!
//! Everything that draws randomness does so from a ChaCha stream keyed by an
//! explicit integer seed, so runs are reproducible bit for bit. Normal
//! variates come from a hand-rolled Box-Muller transform instead of a
//! distribution crate to keep the byte-to-float pipeline under our control.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a stream seed from a base seed and a label, so independent
/// consumers (init, shuffling, each clip) never share a stream.
pub fn stream_seed(base: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label and index, mixed with the base seed.
    let mut h: u64 = 0xcbf29ce484222325 ^ base.rotate_left(17);
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    for b in index.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Standard normal variate via Box-Muller.
pub fn normal_f64(rng: &mut impl Rng) -> f64 {
    // gen::<f64>() is uniform on [0, 1); flip to (0, 1] so the log is finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn uniform_f64(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Uniform integer in `[0, n)`.
pub fn below(rng: &mut impl Rng, n: usize) -> usize {
    rng.gen_range(0..n)
}

/// Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut impl Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
