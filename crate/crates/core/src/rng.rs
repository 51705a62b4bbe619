//! Seeded pseudo-random inputs.
//!
//! A 64-bit linear congruential generator with the MMIX multiplier and
//! increment:
//!
//! ```text
//! state ← state · 6364136223846793005 + 1442695040888963407   (mod 2⁶⁴)
//! ```
//!
//! The state is seeded with the user seed passed once through the update.
//! Each uniform draw takes the top 53 bits of the new state, `u = (state >> 11) / 2⁵³`,
//! so every implementation of the same recurrence reproduces the same stream.

const MULTIPLIER: u64 = 6364136223846793005;
const INCREMENT: u64 = 1442695040888963407;

#[derive(Clone, Debug)]
pub struct Lcg64 {
    state: u64,
}

impl Lcg64 {
    pub fn new(seed: u64) -> Self {
        let mut rng = Self { state: seed };
        rng.next_u64();
        rng
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self
            .state
            .wrapping_mul(MULTIPLIER)
            .wrapping_add(INCREMENT);
        self.state
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// `n` draws in `[-1, 1)`.
    pub fn symmetric_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.range(-1.0, 1.0)).collect()
    }

    /// Coefficients of `Σ_{k<modes} a_k cos(kπx)`, `a_k ∈ [-1, 1)`; sampling
    /// the result on any mesh gives the same underlying function.
    pub fn cosine_profile(&mut self, modes: usize) -> CosineProfile {
        CosineProfile {
            coefficients: self.symmetric_vec(modes),
        }
    }

    /// Independent stream for sub-task `index`, derived from this generator's seed state.
    pub fn fork(&self, index: u64) -> Self {
        Self::new(self.state ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// Finite cosine series on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CosineProfile {
    pub coefficients: Vec<f64>,
}

impl CosineProfile {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(k, a)| a * (k as f64 * std::f64::consts::PI * x).cos())
            .sum()
    }

    pub fn sample(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_stream() {
        let mut rng = Lcg64::new(0);
        // state₁ = c, state₂ = c·a + c
        let s1 = INCREMENT;
        let s2 = s1.wrapping_mul(MULTIPLIER).wrapping_add(INCREMENT);
        assert_eq!(rng.next_u64(), s2);
    }

    #[test]
    fn uniform_range_and_determinism() {
        let mut a = Lcg64::new(42);
        let mut b = Lcg64::new(42);
        for _ in 0..1000 {
            let u = a.uniform();
            assert!((0.0..1.0).contains(&u));
            assert_eq!(u, b.uniform());
        }
        assert_ne!(Lcg64::new(1).uniform(), Lcg64::new(2).uniform());
    }

    #[test]
    fn cosine_profile_is_mesh_independent() {
        let p = Lcg64::new(9).cosine_profile(5);
        assert_eq!(p.coefficients.len(), 5);
        let coarse = p.sample(&[0.0, 0.5, 1.0]);
        let fine = p.sample(&[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!((coarse[1], coarse[2]), (fine[2], fine[4]));
        let sum: f64 = p.coefficients.iter().sum();
        assert!((p.eval(0.0) - sum).abs() < 1e-15);
    }
}
