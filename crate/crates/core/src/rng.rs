//! Deterministic pseudo-random number generation.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood's `splitmix64` finaliser
//! over a Weyl sequence). It is implemented here rather than pulled in as a
//! dependency because reproducibility across platforms and crate versions is
//! a hard requirement: every random draw in the crate goes through this one
//! algorithm, and the acceptance checks pin byte-identical outputs to seeds.
//!
//! State advance and output mix:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
//! z ^= z >> 27;  z *= 0x94D049BB133111EB
//! z ^= z >> 31
//! ```
//!
//! Uniform doubles take the top 53 bits of `z`, scaled by 2^-53, giving
//! values in `[0, 1)`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_2: u64 = 0x94D0_49BB_1331_11EB;

/// SplitMix64 generator. Remembers its seed so reports can echo it back.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
    seed: u64,
}

impl Rng {
    /// Creates a generator whose first outputs are determined by `seed`.
    pub fn new(seed: u64) -> Self {
        Rng { state: seed, seed }
    }

    /// The seed this generator was created with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(MIX_1);
        z = (z ^ (z >> 27)).wrapping_mul(MIX_2);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// Uniform integer in `0..n`. Uses the multiply-shift reduction
    /// `(x * n) >> 64`, whose bias is below 2^-50 for every `n` used here.
    ///
    /// # Panics
    /// Panics if `n` is zero.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below requires a non-empty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle, iterating from the back of the slice.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Derives an independent generator for a named sub-stream, so that
    /// unrelated consumers (weight init, shuffling, dropout, ...) do not
    /// share draw sequences.
    pub fn derive(&self, label: u64) -> Rng {
        let mut probe = Rng::new(self.seed ^ label.rotate_left(17));
        let seed = probe.next_u64();
        Rng::new(seed)
    }
}
