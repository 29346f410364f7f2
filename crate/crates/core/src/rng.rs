//! Counter-based deterministic random streams.
//!
//! Every random draw in this crate comes from a [`StreamRng`] keyed by a
//! master seed plus a list of stream identifiers (iteration counter, probe
//! index, purpose tag, ...). Two streams built from the same key produce the
//! same sequence on every platform, and distinct keys give statistically
//! independent sequences, so results never depend on thread scheduling or
//! call order.

/// Purpose tags keeping unrelated streams apart under one master seed.
pub mod tag {
    pub const PROBE: u64 = 1;
    pub const PARTITION_EPOCH: u64 = 2;
    pub const BLOBS: u64 = 3;
    pub const CIRCLES: u64 = 4;
    pub const SUBSAMPLE: u64 = 5;
    pub const INIT_W: u64 = 6;
    pub const POWER_INIT: u64 = 7;
    pub const LANDMARKS: u64 = 8;
    pub const KMEANS: u64 = 9;
    pub const MONTE_CARLO: u64 = 10;
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// SplitMix64 generator seeded from a hashed key tuple.
#[derive(Debug, Clone)]
pub struct StreamRng {
    state: u64,
}

impl StreamRng {
    /// Derives a stream from `(seed, parts...)`. Each part is folded into the
    /// state through the SplitMix64 output function, so `(s, [a, b])` and
    /// `(s, [b, a])` are unrelated streams.
    pub fn from_key(seed: u64, parts: &[u64]) -> Self {
        let mut state = mix(seed ^ GOLDEN_GAMMA);
        for &p in parts {
            state = mix(state.wrapping_add(GOLDEN_GAMMA) ^ mix(p));
        }
        StreamRng { state }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound) by rejection; unbiased for any bound.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Standard normal pair via Box-Muller.
    pub fn next_gaussian_pair(&mut self) -> (f64, f64) {
        // u1 in (0, 1] so the log is finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        (radius * angle.cos(), radius * angle.sin())
    }

    pub fn next_gaussian(&mut self) -> f64 {
        self.next_gaussian_pair().0
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// `count` distinct indices drawn uniformly from [0, n) without
    /// replacement, in shuffled order.
    pub fn sample_indices(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n);
        let mut all: Vec<usize> = (0..n).collect();
        self.shuffle(&mut all);
        all.truncate(count);
        all
    }
}
