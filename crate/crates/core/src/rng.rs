//! splitmix64 generator and the small set of derived samplers the pipeline needs.
//!
//! Every random decision in the crate goes through [`SplitMix64`] so that runs
//! are reproducible from their seeds alone, across platforms and languages.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The splitmix64 output function applied to an arbitrary 64-bit word.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a list of tags
/// (e.g. class index and cloud index).
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(mix64(seed ^ 0x005E_ED0F_D4EA_3D0A), |acc, &t| {
            mix64(
                acc.wrapping_add(GOLDEN_GAMMA)
                    .wrapping_add(mix64(t.wrapping_add(GOLDEN_GAMMA))),
            )
        })
}

/// splitmix64 PRNG (Steele, Lea & Flood), state advanced by the golden gamma.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`; safe as a logarithm argument.
    #[inline]
    pub fn next_f64_open0(&mut self) -> f64 {
        1.0 - self.next_f64()
    }

    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` by 128-bit multiply-high. `n` must be positive.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box–Muller (cosine branch only).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.next_f64_open0();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher–Yates shuffle of the whole slice.
    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        let len = items.len();
        for i in 0..len.saturating_sub(1) {
            let j = i + self.below(len - i);
            items.swap(i, j);
        }
    }

    /// First `k` entries of a Fisher–Yates shuffle of `0..len`.
    pub fn sample_indices(&mut self, len: usize, k: usize) -> Vec<usize> {
        let k = k.min(len);
        let mut idx: Vec<usize> = (0..len).collect();
        for i in 0..k {
            let j = i + self.below(len - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}
