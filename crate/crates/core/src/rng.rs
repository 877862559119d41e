//! The fixed pseudo-random generator used everywhere in the crate.
//!
//! SplitMix64 (Steele, Lea and Flood, 2014): a 64-bit counter advanced by the
//! golden-ratio increment `0x9E3779B97F4A7C15`, finalized with the
//! `(30, 27, 31)` xor-shift/multiply mix. Derived values:
//!
//! - `next_f64`: the top 53 bits scaled by 2^-53, uniform on `[0, 1)`.
//! - `below(n)`: the high 64 bits of the 128-bit product `next_u64() * n`.
//! - `normal`: Box-Muller with `u1 = 1 - next_f64()` and `u2 = next_f64()`,
//!   returning only the cosine branch so each call consumes exactly two words.
//!
//! Everything is integer arithmetic or `libm`, so streams are identical on
//! every platform and easy to reproduce in another language.

use libm::{cos, log, sqrt};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// An independent stream for a named purpose, keyed off `seed`.
    pub fn derived(seed: u64, stream: u64) -> Self {
        let mut mixer = Self::new(seed ^ stream.wrapping_mul(GOLDEN_GAMMA).rotate_left(17));
        Self::new(mixer.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be non-zero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.next_f64()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        sqrt(-2.0 * log(u1)) * cos(core::f64::consts::TAU * u2)
    }

    /// Index into `weights` drawn proportionally to the (non-negative) weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut target = self.next_f64() * total;
        for (i, w) in weights.iter().enumerate() {
            if target < *w {
                return i;
            }
            target -= w;
        }
        // Rounding can leave a sliver of mass past the last bucket.
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n` in draw order (partial Fisher-Yates).
    pub fn sample_indices(&mut self, n: usize, k: usize) -> alloc::vec::Vec<usize> {
        let k = k.min(n);
        let mut pool: alloc::vec::Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_stream() {
        // Published SplitMix64 outputs for seed 0.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn unit_interval_and_bounds() {
        let mut rng = SplitMix64::new(42);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
            assert!(rng.below(7) < 7);
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = SplitMix64::new(9);
        let n = 50_000;
        let xs: alloc::vec::Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn sample_indices_are_distinct() {
        let mut rng = SplitMix64::new(3);
        let mut idx = rng.sample_indices(100, 8);
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 8);
        assert_eq!(rng.sample_indices(3, 8).len(), 3);
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = SplitMix64::derived(1, 0);
        let mut b = SplitMix64::derived(1, 1);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_eq!(SplitMix64::derived(5, 2), SplitMix64::derived(5, 2));
    }
}
