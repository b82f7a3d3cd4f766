//! Seedable noise source.
//!
//! All stochastic parts of the simulator draw from [`NoiseRng`], a ChaCha8
//! keystream (a counter-based generator) turned into Gaussian variates by
//! Box–Muller. Sub-seeds for images and trials come from [`split_seed`].

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identifier written into CSV and dump metadata.
pub const GENERATOR_ID: &str = "chacha8+box-muller/v1";

#[derive(Clone, Debug)]
pub struct NoiseRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl NoiseRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits, shifted off zero.
        ((self.inner.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bit(&mut self) -> u8 {
        (self.inner.next_u32() & 1) as u8
    }

    pub fn bits(&mut self, n: usize) -> Vec<u8> {
        (0..n).map(|_| self.bit()).collect()
    }

    /// Standard normal variate.
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let (a, b) = self.box_muller();
        self.spare = Some(b);
        a
    }

    /// Circularly-symmetric complex Gaussian with total variance `variance`.
    pub fn complex_gaussian(&mut self, variance: f64) -> Complex64 {
        let (a, b) = self.box_muller();
        let s = (variance / 2.0).sqrt();
        Complex64::new(a * s, b * s)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.gen_range(0..=i);
            items.swap(i, j);
        }
    }

    fn box_muller(&mut self) -> (f64, f64) {
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a sub-seed from `(seed, image_index, trial_index)`.
///
/// The rule is `mix(mix(mix(seed) ^ image) ^ trial.rotate_left(32))` where
/// `mix` is the SplitMix64 finalizer; it is stable across releases.
pub fn split_seed(seed: u64, image_index: u64, trial_index: u64) -> u64 {
    let a = splitmix64(seed);
    let b = splitmix64(a ^ image_index);
    splitmix64(b ^ trial_index.rotate_left(32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = NoiseRng::new(7);
        let mut b = NoiseRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.gaussian().to_bits(), b.gaussian().to_bits());
        }
    }

    #[test]
    fn gaussian_moments() {
        let mut r = NoiseRng::new(1);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.01);
    }

    #[test]
    fn complex_gaussian_variance() {
        let mut r = NoiseRng::new(3);
        let n = 200_000;
        let p = (0..n)
            .map(|_| r.complex_gaussian(0.5).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((p - 0.5).abs() < 0.01);
    }

    #[test]
    fn split_seed_distinct() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..50 {
            for t in 0..50 {
                assert!(seen.insert(split_seed(42, i, t)));
            }
        }
    }
}
