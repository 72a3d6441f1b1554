//! Deterministic random number generation.
//!
//! Every stochastic step in the crate (weight init, shuffling, dropout,
//! phantom geometry) draws from [`DetRng`], a ChaCha12 stream whose full
//! state is a `(seed, word_pos)` pair. Checkpoints persist that pair, so
//! training resumes bit-exactly.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Serializable RNG state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

/// Seeded deterministic RNG.
#[derive(Debug, Clone)]
pub struct DetRng {
    inner: ChaCha12Rng,
    seed: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng {
            inner: ChaCha12Rng::seed_from_u64(seed),
            seed,
        }
    }

    /// Independent stream for a named sub-purpose (e.g. per-epoch shuffles).
    pub fn derived(seed: u64, stream: u64) -> Self {
        DetRng::new(seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn restore(state: RngState) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(state.seed);
        inner.set_word_pos(state.word_pos);
        DetRng {
            inner,
            seed: state.seed,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Unbiased uniform integer in [0, n) via rejection sampling.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn range_usize(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi);
        lo + self.below((hi - lo + 1) as u64) as usize
    }

    /// Standard normal via Box-Muller (cosine branch only, stateless).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Normal(0, std) truncated to two standard deviations.
    pub fn trunc_normal(&mut self, std: f64) -> f64 {
        loop {
            let z = self.normal();
            if z.abs() <= 2.0 {
                return z * std;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.below((i + 1) as u64) as usize;
            slice.swap(i, j);
        }
    }
}

/// Shuffled index order for one epoch, a pure function of (seed, epoch, n).
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = DetRng::derived(seed, 1 + epoch as u64);
    rng.shuffle(&mut order);
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = DetRng::new(7);
        let mut b = DetRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn state_round_trip_continues_stream() {
        let mut a = DetRng::new(42);
        for _ in 0..17 {
            a.uniform();
        }
        let mut b = DetRng::restore(a.state());
        for _ in 0..50 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut rng = DetRng::new(1);
        for _ in 0..1000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn below_is_in_range() {
        let mut rng = DetRng::new(2);
        for n in [1u64, 2, 3, 7, 100] {
            for _ in 0..200 {
                assert!(rng.below(n) < n);
            }
        }
    }

    #[test]
    fn trunc_normal_within_two_std() {
        let mut rng = DetRng::new(3);
        for _ in 0..1000 {
            assert!(rng.trunc_normal(0.02).abs() <= 0.04 + 1e-12);
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut rng = DetRng::new(4);
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn epoch_orders_differ_by_epoch() {
        let a = epoch_order(9, 0, 64);
        let b = epoch_order(9, 1, 64);
        assert_ne!(a, b);
        assert_eq!(a, epoch_order(9, 0, 64));
    }
}
