//! Deterministic random streams.
//!
//! Every stochastic step in the pipeline (masking, negative sampling, Gumbel
//! noise, data order, weight init) draws from an explicit [`Rng`] stream
//! derived from a base seed plus integer labels. There is no global random
//! state: the same config and seed produce bit-identical runs, and streams
//! can be re-derived after a checkpoint resume.

/// xoshiro256** with splitmix64 seeding. State is four u64 words, which makes
/// it trivial to persist in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    s: [u64; 4],
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng { s }
    }

    /// Derive an independent stream from a base seed and a label path, e.g.
    /// `Rng::derive(seed, &[epoch, batch, item])`. Derivation is pure, so a
    /// stream can be reconstructed from counters alone.
    pub fn derive(seed: u64, labels: &[u64]) -> Self {
        let mut mix = seed ^ 0x6a09e667f3bcc908;
        for &l in labels {
            mix = splitmix64(&mut mix) ^ l.wrapping_mul(0x9e3779b97f4a7c15);
        }
        Rng::new(splitmix64(&mut mix))
    }

    pub fn state(&self) -> [u64; 4] {
        self.s
    }

    pub fn from_state(s: [u64; 4]) -> Self {
        Rng { s }
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1]
            .wrapping_mul(5)
            .rotate_left(7)
            .wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1); never returns exactly 0 (safe for log transforms).
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Rejection-free scaling; bias is negligible for n << 2^64 and this
        // is not a cryptographic context.
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Gumbel(0, 1) noise: -ln(-ln(u)) with u in (0, 1).
    pub fn gumbel(&mut self) -> f64 {
        let u = self.uniform_open();
        -(-u.ln()).ln()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Sample `k` distinct values from [0, n) uniformly (partial Fisher-Yates).
    /// Requires k <= n.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
