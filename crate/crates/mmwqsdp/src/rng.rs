//! Seeded randomness with reproducible stream splitting.
//!
//! Every stochastic operation in this crate takes an explicit [`Rng`].
//! Parallel estimators derive one child per repetition index, so results
//! are bit-identical for a fixed seed regardless of the worker count.

use rand::distributions::uniform::{SampleRange, SampleUniform};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution};

/// Label of the underlying counter-mode generator.
pub const ALGORITHM: &str = "chacha12";

/// Deterministic generator: a ChaCha12 stream keyed by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha12Rng,
}

// splitmix64 finalizer; used to key child streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha12Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Derive an independent child generator for repetition `index`.
    ///
    /// Children of distinct indices, and children of distinct parents,
    /// use unrelated key/stream pairs, so estimators may fan out over
    /// repetitions without sharing state.
    pub fn child(&self, index: u64) -> Rng {
        let key = mix(self.seed ^ mix(self.stream ^ mix(index)));
        Rng::with_stream(key, index)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn range<T: SampleUniform, R: SampleRange<T>>(&mut self, range: R) -> T {
        self.inner.gen_range(range)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.gen::<f64>() < p
    }

    /// Number of successes among `shots` coins of bias `p`.
    pub fn binomial(&mut self, shots: u64, p: f64) -> u64 {
        let p = p.clamp(0.0, 1.0);
        if shots == 0 || p == 0.0 {
            return 0;
        }
        if p == 1.0 {
            return shots;
        }
        Binomial::new(shots, p).expect("clamped p").sample(&mut self.inner)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        rand_distr::StandardNormal.sample(&mut self.inner)
    }

    /// Index draw with probabilities proportional to `weights`.
    /// Weights must be nonnegative with a positive sum.
    pub fn weighted_index(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0, "weighted_index needs positive mass");
        let mut u = self.inner.gen::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            u -= w;
            if u < 0.0 {
                return i;
            }
        }
        weights.len() - 1
    }

    pub(crate) fn raw(&mut self) -> &mut ChaCha12Rng {
        &mut self.inner
    }
}
