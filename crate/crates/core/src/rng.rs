//! Counter-based splittable random number streams.
//!
//! Episode `k` of a run with master seed `s` draws from the stream seeded by
//! `substream_seed(s, k)`. The derivation is a pure hash of `(s, k)`, so
//! episodes are statistically independent and reproducible regardless of the
//! order in which they are simulated.

use crate::fmath;

/// SplitMix64 finalizer (Sebastiano Vigna). Good bit diffusion,
/// non-cryptographic.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

/// Derives the seed of substream `index` from a master seed.
#[inline]
pub fn substream_seed(master: u64, index: u64) -> u64 {
    mix(master ^ mix(index.wrapping_mul(GOLDEN).wrapping_add(GOLDEN)))
}

/// A SplitMix64 stream.
#[derive(Clone, Debug)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn from_seed(seed: u64) -> Self {
        Stream { state: seed }
    }

    /// Stream for substream `index` under `master`; see [`substream_seed`].
    pub fn substream(master: u64, index: u64) -> Self {
        Stream::from_seed(substream_seed(master, index))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        ((self.next_u64() >> 11) as f64) / DEN
    }

    /// Uniform strictly inside (0, 1).
    #[inline]
    pub fn open01(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        (((self.next_u64() >> 11) as f64) + 0.5) / DEN
    }

    /// Uniform on [lo, hi).
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // 53-bit mantissa path is plenty for the index ranges used here.
        (self.next_f64() * n as f64) as usize % n
    }

    /// Exponential with the given rate; strictly positive. `rate` must be > 0.
    #[inline]
    pub fn exp(&mut self, rate: f64) -> f64 {
        debug_assert!(rate > 0.0);
        -fmath::ln(self.open01()) / rate
    }

    /// Samples an index proportionally to nonnegative `weights`.
    /// Returns `None` when the total weight is not positive.
    pub fn pick_weighted(&mut self, weights: &[f64]) -> Option<usize> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let target = self.next_f64() * total;
        let mut acc = 0.0;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if target < acc {
                return Some(i);
            }
        }
        // Floating accumulation can leave target just past the last bucket.
        weights.iter().rposition(|&w| w > 0.0)
    }
}
