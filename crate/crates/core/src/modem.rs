//! Gray-mapped 16-QAM with unit average symbol energy.

use num_complex::Complex;

use crate::error::{invalid, Result};
use crate::linalg::ComplexMatrix;
use crate::rng::RandomSource;
use crate::scalar::Real;

/// Per-axis Gray map: bit pair `(b0, b1)` to level `{-3, -1, +1, +3}`.
const LEVELS: [f64; 4] = [-3.0, -1.0, 3.0, 1.0];

fn level_to_bits(k: usize) -> [u8; 2] {
    // k indexes the levels -3, -1, +1, +3
    match k {
        0 => [0, 0],
        1 => [0, 1],
        2 => [1, 1],
        _ => [1, 0],
    }
}

fn axis_index<T: Real>(v: T, scale: T) -> usize {
    let u = v / scale;
    if u < -T::lit(2.0) {
        0
    } else if u < T::zero() {
        1
    } else if u < T::lit(2.0) {
        2
    } else {
        3
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Qam16;

impl Qam16 {
    pub const ORDER: usize = 16;
    pub const BITS_PER_SYMBOL: usize = 4;

    pub fn new() -> Self {
        Self
    }

    fn scale<T: Real>() -> T {
        T::one() / T::lit(10.0).sqrt()
    }

    /// Point for a 4-bit label `(b0 b1 | b2 b3)`, first pair on the in-phase axis.
    pub fn point<T: Real>(&self, label: usize) -> Complex<T> {
        let s = Self::scale::<T>();
        let i = LEVELS[(label >> 2) & 3];
        let q = LEVELS[label & 3];
        Complex::new(T::lit(i) * s, T::lit(q) * s)
    }

    pub fn points<T: Real>(&self) -> Vec<Complex<T>> {
        (0..16).map(|k| self.point(k)).collect()
    }

    /// Nearest-point label.
    pub fn decide<T: Real>(&self, z: Complex<T>) -> usize {
        let s = Self::scale::<T>();
        let bi = level_to_bits(axis_index(z.re, s));
        let bq = level_to_bits(axis_index(z.im, s));
        usize::from(bi[0]) << 3 | usize::from(bi[1]) << 2 | usize::from(bq[0]) << 1 | usize::from(bq[1])
    }

    pub fn modulate<T: Real>(&self, bits: &[u8]) -> Result<Vec<Complex<T>>> {
        if !bits.len().is_multiple_of(4) {
            return invalid(format!("bit count {} is not a multiple of 4", bits.len()));
        }
        if bits.iter().any(|&b| b > 1) {
            return invalid("bits must be 0 or 1");
        }
        Ok(bits
            .chunks_exact(4)
            .map(|c| {
                self.point(usize::from(c[0]) << 3 | usize::from(c[1]) << 2 | usize::from(c[2]) << 1 | usize::from(c[3]))
            })
            .collect())
    }

    pub fn demodulate_hard<T: Real>(&self, symbols: &[Complex<T>]) -> Vec<u8> {
        let mut out = Vec::with_capacity(symbols.len() * 4);
        for &z in symbols {
            let k = self.decide(z);
            out.extend([
                (k >> 3 & 1) as u8,
                (k >> 2 & 1) as u8,
                (k >> 1 & 1) as u8,
                (k & 1) as u8,
            ]);
        }
        out
    }

    pub fn random_labels(&self, n: usize, rng: &mut RandomSource) -> Vec<usize> {
        (0..n).map(|_| rng.below(16)).collect()
    }

    /// `rows x cols` block of uniformly random points.
    pub fn random_symbols<T: Real>(&self, rows: usize, cols: usize, rng: &mut RandomSource) -> ComplexMatrix<T> {
        ComplexMatrix::from_fn(rows, cols, |_, _| self.point(rng.below(16)))
    }

    pub fn decide_all<T: Real>(&self, symbols: &[Complex<T>]) -> Vec<usize> {
        symbols.iter().map(|&z| self.decide(z)).collect()
    }
}

/// Fraction of positions whose hard decisions differ.
pub fn ser<T: Real>(tx: &[Complex<T>], rx: &[Complex<T>]) -> Result<f64> {
    if tx.len() != rx.len() {
        return invalid(format!("length mismatch {} vs {}", tx.len(), rx.len()));
    }
    if tx.is_empty() {
        return Ok(0.0);
    }
    let q = Qam16::new();
    let errors = tx
        .iter()
        .zip(rx)
        .filter(|(a, b)| q.decide(**a) != q.decide(**b))
        .count();
    Ok(errors as f64 / tx.len() as f64)
}

/// Symbol error count between two blocks.
pub fn symbol_errors<T: Real>(tx: &ComplexMatrix<T>, rx: &ComplexMatrix<T>) -> Result<usize> {
    if tx.shape() != rx.shape() {
        return invalid("shape mismatch");
    }
    let q = Qam16::new();
    Ok(tx
        .as_slice()
        .iter()
        .zip(rx.as_slice())
        .filter(|(a, b)| q.decide(**a) != q.decide(**b))
        .count())
}

/// Gaussian tail probability.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Complementary error function (Numerical Recipes `erfcc`, rel. error < 1.2e-7).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98
                                    + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Exact 16-QAM SER on AWGN: `1 - (1 - 1.5 Q(sqrt(Es / (5 N0))))^2`.
pub fn qam16_awgn_ser(es_n0_db: f64) -> f64 {
    let p = 1.5 * q_function((10f64.powf(es_n0_db / 10.0) / 5.0).sqrt());
    1.0 - (1.0 - p).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    type C = Complex<f64>;

    #[test]
    fn unit_energy_and_gray() {
        let q = Qam16::new();
        let pts: Vec<C> = q.points();
        let e = pts.iter().map(|z| z.norm_sqr()).sum::<f64>() / 16.0;
        assert!((e - 1.0).abs() < 1e-14);
        let d = 2.0 / 10f64.sqrt();
        let mut neighbours = 0;
        for a in 0..16 {
            for b in 0..16 {
                if ((pts[a] - pts[b]).norm() - d).abs() < 1e-9 {
                    neighbours += 1;
                    assert_eq!((a ^ b).count_ones(), 1, "{a} {b}");
                }
            }
        }
        assert_eq!(neighbours, 48);
    }

    #[test]
    fn zero_bits_map_to_corner() {
        let q = Qam16::new();
        let s: Vec<C> = q.modulate(&[0, 0, 0, 0]).unwrap();
        assert!((s[0] - C::new(-3.0, -3.0) / 10f64.sqrt()).norm() < 1e-15);
        assert_eq!(q.demodulate_hard(&s), vec![0, 0, 0, 0]);
        assert!(q.modulate::<f64>(&[0, 1, 1]).is_err());
        assert!(q.modulate::<f64>(&[0, 1, 1, 2]).is_err());
    }

    #[test]
    fn noiseless_round_trip() {
        let q = Qam16::new();
        let mut rng = RandomSource::new(1);
        let bits: Vec<u8> = (0..40_000).map(|_| rng.bit()).collect();
        let s: Vec<C> = q.modulate(&bits).unwrap();
        assert_eq!(q.demodulate_hard(&s), bits);
        assert_eq!(ser(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn ser_counting() {
        let q = Qam16::new();
        let a: Vec<C> = vec![q.point(0); 8000];
        let mut b = a.clone();
        b[17] = q.point(5);
        assert_eq!(ser(&a, &b).unwrap(), 1.25e-4);
        let far: Vec<C> = vec![q.point(15); 8000];
        assert_eq!(ser(&a, &far).unwrap(), 1.0);
        assert!(ser(&a, &b[..10]).is_err());
    }

    #[test]
    fn erfc_reference_values() {
        assert!((erfc(0.0) - 1.0).abs() < 1e-7);
        assert!((erfc(1.0) - 0.157_299_207).abs() < 1e-7);
        assert!((erfc(-1.0) - 1.842_700_793).abs() < 1e-7);
        assert!((q_function(3.0) - 1.349_898e-3).abs() < 1e-8);
    }

    #[test]
    fn awgn_ser_matches_closed_form() {
        // Es/N0 = 14 dB keeps the Monte-Carlo budget small (SER around 7e-3).
        let es_n0_db = 14.0;
        let n0 = 10f64.powf(-es_n0_db / 10.0);
        let q = Qam16::new();
        let mut rng = RandomSource::new(2);
        let n = 400_000;
        let tx: Vec<C> = (0..n).map(|_| q.point(rng.below(16))).collect();
        let rx: Vec<C> = tx.iter().map(|&z| z + rng.cgauss(n0)).collect();
        let got = ser(&tx, &rx).unwrap();
        let want = qam16_awgn_ser(es_n0_db);
        assert!((got / want - 1.0).abs() < 0.3, "{got} vs {want}");
        assert!((qam16_awgn_ser(20.0) - 1.16e-5).abs() < 0.05e-5);
    }
}
