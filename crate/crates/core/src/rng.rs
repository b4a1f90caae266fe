//! Seeded random streams. Every stochastic subsystem draws from its own
//! child stream derived from a parent seed and a label, so switching one
//! impairment on or off never shifts another's draws.

use num_complex::Complex;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::linalg::ComplexMatrix;
use crate::scalar::Real;

pub const RNG_ALGORITHM: &str = "chacha12";

#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha12Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Child stream keyed by `label`. Depends only on this source's seed,
    /// never on how many values have already been drawn.
    pub fn derive(&self, label: &str) -> Self {
        Self::new(splitmix64(self.seed ^ fnv1a64(label)))
    }

    pub fn derive_indexed(&self, label: &str, index: u64) -> Self {
        Self::new(splitmix64(splitmix64(self.seed ^ fnv1a64(label)) ^ index))
    }

    pub fn standard_normal<T: Real>(&mut self) -> T {
        let x: f64 = StandardNormal.sample(&mut self.rng);
        T::lit(x)
    }

    pub fn normal<T: Real>(&mut self, mean: T, std_dev: T) -> T {
        mean + std_dev * self.standard_normal::<T>()
    }

    pub fn uniform<T: Real>(&mut self, lo: T, hi: T) -> T {
        let u: f64 = self.rng.random();
        lo + (hi - lo) * T::lit(u)
    }

    /// Circularly symmetric complex Gaussian with `E|z|^2 = variance`.
    pub fn cgauss<T: Real>(&mut self, variance: T) -> Complex<T> {
        let s = (variance / T::lit(2.0)).sqrt();
        let re = self.standard_normal::<T>();
        let im = self.standard_normal::<T>();
        Complex::new(re * s, im * s)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bit(&mut self) -> u8 {
        (self.rng.next_u32() & 1) as u8
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<X>(&mut self, v: &mut [X]) {
        for i in (1..v.len()).rev() {
            let j = self.rng.random_range(0..=i);
            v.swap(i, j);
        }
    }
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Matrix of i.i.d. circularly symmetric complex Gaussian entries with
/// per-entry variance `variance` (real and imaginary parts `variance/2` each).
pub fn cgauss_matrix<T: Real>(
    rows: usize,
    cols: usize,
    variance: T,
    rng: &mut RandomSource,
) -> Result<ComplexMatrix<T>> {
    if !(variance >= T::zero()) {
        return invalid(format!("variance must be nonnegative, got {variance}"));
    }
    if variance == T::zero() {
        return Ok(ComplexMatrix::zeros(rows, cols));
    }
    Ok(ComplexMatrix::from_fn(rows, cols, |_, _| rng.cgauss(variance)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_variance_gives_zeros() {
        let mut rng = RandomSource::new(1);
        let m: ComplexMatrix<f64> = cgauss_matrix(3, 4, 0.0, &mut rng).unwrap();
        assert_eq!(m.frobenius_norm_sq(), 0.0);
    }

    #[test]
    fn negative_variance_rejected() {
        let mut rng = RandomSource::new(1);
        assert!(cgauss_matrix::<f64>(2, 2, -1.0, &mut rng).is_err());
    }

    #[test]
    fn second_moment_matches_variance() {
        let mut rng = RandomSource::new(7);
        let m: ComplexMatrix<f64> = cgauss_matrix(1, 100_000, 2.0, &mut rng).unwrap();
        let mean = m.frobenius_norm_sq() / 1e5;
        assert!((mean - 2.0).abs() / 2.0 < 0.02, "{mean}");
        let re_var = m.as_slice().iter().map(|z| z.re * z.re).sum::<f64>() / 1e5;
        assert!((re_var - 1.0).abs() < 0.03);
    }

    #[test]
    fn same_seed_same_matrix() {
        let a: ComplexMatrix<f64> = cgauss_matrix(4, 4, 1.0, &mut RandomSource::new(99)).unwrap();
        let b: ComplexMatrix<f64> = cgauss_matrix(4, 4, 1.0, &mut RandomSource::new(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn derived_streams_ignore_parent_consumption() {
        let parent = RandomSource::new(5);
        let mut used = parent.clone();
        for _ in 0..10 {
            used.standard_normal::<f64>();
        }
        let mut a = parent.derive("phase_noise");
        let mut b = used.derive("phase_noise");
        assert_eq!(a.next_u64(), b.next_u64());
        let mut c = parent.derive("quantization");
        assert_ne!(parent.derive("phase_noise").next_u64(), c.next_u64());
        assert_ne!(
            parent.derive_indexed("block", 0).next_u64(),
            parent.derive_indexed("block", 1).next_u64()
        );
    }
}
