//! Deterministic, portable random streams.
//!
//! Every stochastic step of the pipeline draws from a [`SeededRng`]. The
//! generator is ChaCha8 (a 64-bit counter-based stream cipher), so a seed
//! produces the same sequence on every platform. Independent substreams are
//! addressed by a 64-bit stream id, which lets per-sample work derive its own
//! stream without depending on iteration order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

pub fn seeded_rng(seed: u64) -> SeededRng {
    SeededRng::with_stream(seed, 0)
}

impl SeededRng {
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `label`; does not advance `self`.
    pub fn substream(&self, label: u64) -> SeededRng {
        SeededRng::with_stream(self.seed, mix(self.stream, label))
    }

    /// Substream keyed by a string label.
    pub fn named(&self, label: &str) -> SeededRng {
        self.substream(fnv1a(label.as_bytes()))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift; bias is < 2^-32 for the sizes used here
        (((self.inner.next_u64() >> 32) * n as u64) >> 32) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(f64::MIN_POSITIVE);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// 64-bit FNV-1a, used to turn labels into stream ids.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

// splitmix64 finalizer over the combined ids
fn mix(parent: u64, label: u64) -> u64 {
    let mut z = parent ^ label.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = seeded_rng(0);
        let mut b = seeded_rng(0);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_differ() {
        assert_ne!(seeded_rng(0).next_u64(), seeded_rng(1).next_u64());
    }

    #[test]
    fn golden_seed_42() {
        let mut r = seeded_rng(42);
        let got: Vec<u64> = (0..10).map(|_| r.next_u64()).collect();
        assert_eq!(got, GOLDEN_42.to_vec());
    }

    #[test]
    fn substreams_are_independent_of_parent_position() {
        let base = seeded_rng(7);
        let mut advanced = base.clone();
        advanced.next_u64();
        let mut a = base.substream(3);
        let mut b = advanced.substream(3);
        assert_eq!(a.next_u64(), b.next_u64());
        assert_ne!(base.substream(3).next_u64(), base.substream(4).next_u64());
    }

    #[test]
    fn uniform_and_below_ranges() {
        let mut r = seeded_rng(9);
        for _ in 0..1000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(r.below(7) < 7);
        }
    }

    // recorded once from this generator; must never change
    const GOLDEN_42: [u64; 10] = [
        12578764544318200737,
        17529487244874322312,
        7886285670807131020,
        11572758976476374866,
        5323617429756461744,
        2766252901828231838,
        5682345367224914708,
        14828835203913492612,
        14227028876630821888,
        4401121311800897944,
    ];
}
