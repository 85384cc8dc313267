use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Counter-based random stream keyed by `(seed, stream_id)`.
///
/// Backed by ChaCha8, whose keystream position is a pure function of the key
/// (derived from `seed`), the 64-bit stream selector and a block counter. Two
/// streams with different ids never share state, so parallel replicas can
/// each own one without coordination.
///
/// Every draw consumes a fixed number of 64-bit words: one for
/// [`uniform01`](Self::uniform01) and [`index_uniform`](Self::index_uniform),
/// two for [`standard_normal`](Self::standard_normal). The normal transform
/// uses the pure-Rust `libm` routines so results do not depend on the host
/// C library.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
    words: u64,
}

const TWO_PI: f64 = std::f64::consts::TAU;
const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream { seed, stream_id, inner, words: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 64-bit words consumed so far.
    pub fn counter(&self) -> u64 {
        self.words
    }

    #[inline]
    fn next_word(&mut self) -> u64 {
        self.words += 1;
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform01(&mut self) -> f64 {
        (self.next_word() >> 11) as f64 * INV_2_53
    }

    /// Standard normal via the cosine branch of Box-Muller (no caching, so
    /// every draw advances the stream by exactly two words).
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform01(); // (0, 1]
        let u2 = self.uniform01();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(TWO_PI * u2)
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        mean + std_dev * self.standard_normal()
    }

    /// Index in `0..n` by multiply-high (Lemire without rejection). The bias
    /// is at most `n / 2^64`, and the stream advances by one word.
    ///
    /// # Panics
    /// Panics if `n == 0`.
    pub fn index_uniform(&mut self, n: usize) -> usize {
        assert!(n >= 1, "index_uniform needs n >= 1");
        ((self.next_word() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle driven by [`index_uniform`](Self::index_uniform).
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index_uniform(i + 1);
            items.swap(i, j);
        }
    }
}
