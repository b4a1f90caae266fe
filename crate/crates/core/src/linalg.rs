//! Dense complex matrices and the few decompositions the simulator needs.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex;

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

/// Row-major dense complex matrix.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> fmt::Debug for ComplexMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            write!(f, "  ")?;
            for c in 0..self.cols.min(8) {
                let z = self[(r, c)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl<T: Real> ComplexMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if rows * cols != data.len() {
            return invalid(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex::new(T::zero(), T::zero()); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::new(T::one(), T::zero());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diag(d: &[Complex<T>]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<Complex<T>>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return invalid("ragged rows");
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex<T>> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[Complex<T>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [Complex<T>] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn column(&self, c: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, v: &[Complex<T>]) {
        for (r, &z) in v.iter().enumerate() {
            self[(r, c)] = z;
        }
    }

    /// Columns `start..end` as a new matrix.
    pub fn cols_range(&self, start: usize, end: usize) -> Self {
        Self::from_fn(self.rows, end - start, |r, c| self[(r, start + c)])
    }

    /// Columns picked by index, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |r, c| self[(r, idx[c])])
    }

    /// Horizontal concatenation.
    pub fn hstack(blocks: &[Self]) -> Result<Self> {
        let rows = blocks.first().map_or(0, |b| b.rows);
        if blocks.iter().any(|b| b.rows != rows) {
            return invalid("hstack row mismatch");
        }
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut off = 0;
        for b in blocks {
            for r in 0..rows {
                out.row_mut(r)[off..off + b.cols].copy_from_slice(b.row(r));
            }
            off += b.cols;
        }
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn h(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn t(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn map(&self, f: impl Fn(Complex<T>) -> Complex<T>) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn scale(&self, k: Complex<T>) -> Self {
        self.map(|z| z * k)
    }

    pub fn scale_real(&self, k: T) -> Self {
        self.map(|z| z * k)
    }

    pub fn scale_in_place(&mut self, k: T) {
        for z in &mut self.data {
            *z = *z * k;
        }
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return invalid(format!(
                "hadamard shape mismatch {:?} vs {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        })
    }

    /// `diag(d) * self`.
    pub fn scale_rows(&self, d: &[Complex<T>]) -> Self {
        assert_eq!(d.len(), self.rows);
        let mut out = self.clone();
        for (r, &k) in d.iter().enumerate() {
            for z in out.row_mut(r) {
                *z = *z * k;
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols,
            other.rows,
            "matmul shape mismatch {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o = *o + a * b;
                }
            }
        }
        out
    }

    pub fn try_matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return invalid(format!(
                "matmul shape mismatch {:?} x {:?}",
                self.shape(),
                other.shape()
            ));
        }
        Ok(self.matmul(other))
    }

    pub fn frobenius_norm_sq(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sq().sqrt()
    }

    /// Mean of `|a_ij|^2` along each row.
    pub fn row_mean_power(&self) -> Vec<T> {
        let n = T::from_usize(self.cols.max(1)).unwrap();
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|z| z.norm_sqr()).sum::<T>() / n)
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(T::zero(), T::max)
    }

    /// `||self - other||_F / ||other||_F`.
    pub fn rel_error(&self, reference: &Self) -> T {
        let diff = self - reference;
        let den = reference.frobenius_norm();
        if den == T::zero() {
            diff.frobenius_norm()
        } else {
            diff.frobenius_norm() / den
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ComplexMatrix<U> {
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|z| Complex::new(U::lit(z.re.as_f64()), U::lit(z.im.as_f64())))
                .collect(),
        }
    }

    /// Solves `self * X = B` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &Self) -> Result<Self> {
        if self.rows != self.cols {
            return invalid("solve needs a square matrix");
        }
        if b.rows != self.rows {
            return invalid("solve right-hand side row mismatch");
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut x = b.clone();
        let scale = self.data.iter().map(|z| z.norm()).fold(T::zero(), T::max);
        let tiny = scale * T::epsilon() * T::from_usize(n.max(1)).unwrap();
        for k in 0..n {
            let (p, pv) =
                (k..n)
                    .map(|r| (r, a[(r, k)].norm()))
                    .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pv <= tiny || pv == T::zero() {
                return Err(Error::Singular(format!("zero pivot at column {k}")));
            }
            if p != k {
                for c in 0..n {
                    a.data.swap(k * n + c, p * n + c);
                }
                for c in 0..x.cols {
                    x.data.swap(k * x.cols + c, p * x.cols + c);
                }
            }
            let inv = a[(k, k)].inv();
            for r in k + 1..n {
                let f = a[(r, k)] * inv;
                if f.re == T::zero() && f.im == T::zero() {
                    continue;
                }
                for c in k..n {
                    let v = a[(k, c)];
                    a[(r, c)] = a[(r, c)] - f * v;
                }
                for c in 0..x.cols {
                    let v = x[(k, c)];
                    x[(r, c)] = x[(r, c)] - f * v;
                }
            }
        }
        for k in (0..n).rev() {
            let inv = a[(k, k)].inv();
            for c in 0..x.cols {
                let mut acc = x[(k, c)];
                for j in k + 1..n {
                    acc = acc - a[(k, j)] * x[(j, c)];
                }
                x[(k, c)] = acc * inv;
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Self::identity(self.rows))
    }

    /// Thin singular value decomposition `A = U diag(s) V^H` with singular
    /// values sorted in decreasing order (one-sided Jacobi).
    pub fn svd(&self) -> Svd<T> {
        if self.rows < self.cols {
            let t = self.h().svd();
            return Svd { u: t.v, s: t.s, v: t.u };
        }
        let (m, n) = self.shape();
        let mut u = self.clone();
        let mut v = Self::identity(n);
        let eps = T::epsilon();
        for _sweep in 0..80 {
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let mut alpha = T::zero();
                    let mut beta = T::zero();
                    let mut gamma = Complex::new(T::zero(), T::zero());
                    for r in 0..m {
                        let up = u[(r, p)];
                        let uq = u[(r, q)];
                        alpha += up.norm_sqr();
                        beta += uq.norm_sqr();
                        gamma = gamma + up.conj() * uq;
                    }
                    let g = gamma.norm();
                    if g <= eps * (alpha * beta).sqrt() || g == T::zero() {
                        continue;
                    }
                    rotated = true;
                    // Align the phase of column q so the cross term is real.
                    let phase = Complex::new(gamma.re / g, -gamma.im / g);
                    let zeta = (beta - alpha) / (T::lit(2.0) * g);
                    let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                    let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    for mat in [&mut u, &mut v] {
                        for r in 0..mat.rows {
                            let a = mat[(r, p)];
                            let b = mat[(r, q)] * phase;
                            mat[(r, p)] = a * c - b * s;
                            mat[(r, q)] = a * s + b * c;
                        }
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sv: Vec<(T, usize)> = (0..n)
            .map(|j| ((0..m).map(|r| u[(r, j)].norm_sqr()).sum::<T>().sqrt(), j))
            .collect();
        sv.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut uu = Self::zeros(m, n);
        let mut vv = Self::zeros(n, n);
        let mut s = Vec::with_capacity(n);
        for (k, &(sigma, j)) in sv.iter().enumerate() {
            s.push(sigma);
            for r in 0..m {
                uu[(r, k)] = if sigma > T::zero() {
                    u[(r, j)] / sigma
                } else {
                    Complex::new(T::zero(), T::zero())
                };
            }
            for r in 0..n {
                vv[(r, k)] = v[(r, j)];
            }
        }
        Svd { u: uu, s, v: vv }
    }

    /// 2-norm condition number (`inf` when singular).
    pub fn cond(&self) -> T {
        let s = self.svd().s;
        match (s.first(), s.last()) {
            (Some(&hi), Some(&lo)) if lo > T::zero() => hi / lo,
            _ => T::infinity(),
        }
    }

    /// Moore-Penrose pseudo-inverse, truncating singular values below
    /// `rtol * s_max`.
    pub fn pinv(&self, rtol: T) -> Self {
        let Svd { u, s, v } = self.svd();
        let cut = s.first().copied().unwrap_or(T::zero()) * rtol;
        let mut vs = v.clone();
        for (k, &sk) in s.iter().enumerate() {
            let inv = if sk > cut && sk > T::zero() {
                T::one() / sk
            } else {
                T::zero()
            };
            for r in 0..vs.rows {
                vs[(r, k)] = vs[(r, k)] * inv;
            }
        }
        vs.matmul(&u.h())
    }
}

impl<T: Real> ComplexMatrix<T> {
    /// Lower-triangular `L` with `L L^H = self` for a Hermitian positive
    /// semi-definite matrix. Zero pivots yield zero columns.
    pub fn cholesky(&self) -> Result<Self> {
        if self.rows != self.cols {
            return invalid("cholesky needs a square matrix");
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        let scale = (0..n).map(|i| self[(i, i)].re.abs()).fold(T::zero(), T::max);
        for j in 0..n {
            let mut d = self[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if d < -scale * T::lit(1e-10) {
                return Err(Error::Singular("matrix is not positive semi-definite".into()));
            }
            let djj = if d > T::zero() { d.sqrt() } else { T::zero() };
            l[(j, j)] = Complex::new(djj, T::zero());
            for i in j + 1..n {
                let mut acc = self[(i, j)];
                for k in 0..j {
                    acc = acc - l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = if djj > T::zero() {
                    acc / djj
                } else {
                    Complex::new(T::zero(), T::zero())
                };
            }
        }
        Ok(l)
    }
}

/// Output of [`ComplexMatrix::svd`].
#[derive(Clone, Debug)]
pub struct Svd<T: Real> {
    pub u: ComplexMatrix<T>,
    pub s: Vec<T>,
    pub v: ComplexMatrix<T>,
}

impl<T: Real> Default for ComplexMatrix<T> {
    fn default() -> Self {
        Self::zeros(0, 0)
    }
}

impl<T: Real> Index<(usize, usize)> for ComplexMatrix<T> {
    type Output = Complex<T>;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex<T> {
        &self.data[r * self.cols + c]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for ComplexMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[r * self.cols + c]
    }
}

impl<T: Real> Mul for &ComplexMatrix<T> {
    type Output = ComplexMatrix<T>;
    fn mul(self, rhs: Self) -> ComplexMatrix<T> {
        self.matmul(rhs)
    }
}

impl<T: Real> Add for &ComplexMatrix<T> {
    type Output = ComplexMatrix<T>;
    fn add(self, rhs: Self) -> ComplexMatrix<T> {
        assert_eq!(self.shape(), rhs.shape());
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<T: Real> Sub for &ComplexMatrix<T> {
    type Output = ComplexMatrix<T>;
    fn sub(self, rhs: Self) -> ComplexMatrix<T> {
        assert_eq!(self.shape(), rhs.shape());
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Least-squares solution of `X * A = B` for a wide `A` with full row rank:
/// `X = B A^H (A A^H)^{-1}`.
pub fn right_least_squares<T: Real>(b: &ComplexMatrix<T>, a: &ComplexMatrix<T>) -> Result<ComplexMatrix<T>> {
    if a.cols() != b.cols() {
        return invalid("least-squares column mismatch");
    }
    let gram = a.matmul(&a.h());
    let svd = gram.svd();
    let smax = svd.s.first().copied().unwrap_or(T::zero());
    let smin = svd.s.last().copied().unwrap_or(T::zero());
    if smax == T::zero() || smin <= smax * T::lit(1e-12) {
        return invalid("rank-deficient pilot block");
    }
    // X^H = (A A^H)^{-1} A B^H  (Gram matrix is Hermitian)
    let xh = gram.solve(&a.matmul(&b.h()))?;
    Ok(xh.h())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    type M = ComplexMatrix<f64>;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn pseudo_random(rows: usize, cols: usize, seed: u64) -> M {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        M::from_fn(rows, cols, |_, _| c(next(), next()))
    }

    #[test]
    fn frobenius_hand_values() {
        assert_eq!(M::identity(4).frobenius_norm_sq(), 4.0);
        assert_eq!(M::zeros(3, 5).frobenius_norm_sq(), 0.0);
        let a = M::from_rows(&[vec![c(1.0, 1.0), c(0.0, 0.0)], vec![c(0.0, 0.0), c(1.0, -1.0)]]).unwrap();
        assert!((a.frobenius_norm_sq() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(M::new(2, 3, vec![c(0.0, 0.0); 5]).is_err());
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = pseudo_random(5, 5, 3);
        let x = pseudo_random(5, 2, 4);
        let b = a.matmul(&x);
        let got = a.solve(&b).unwrap();
        assert!(got.max_abs_diff(&x) < 1e-10);
        let inv = a.inverse().unwrap();
        assert!(inv.matmul(&a).max_abs_diff(&M::identity(5)) < 1e-10);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut a = pseudo_random(3, 3, 9);
        let r0 = a.row(0).to_vec();
        a.row_mut(2).copy_from_slice(&r0);
        assert!(matches!(a.solve(&M::identity(3)), Err(Error::Singular(_))));
    }

    #[test]
    fn svd_reconstructs_tall_and_wide() {
        for &(m, n) in &[(6, 4), (4, 4), (3, 7)] {
            let a = pseudo_random(m, n, (m * 10 + n) as u64);
            let Svd { u, s, v } = a.svd();
            let k = s.len();
            let sd = M::from_diag(&s.iter().map(|&x| c(x, 0.0)).collect::<Vec<_>>());
            let rec = u.matmul(&sd).matmul(&v.h());
            assert!(rec.max_abs_diff(&a) < 1e-10, "{m}x{n}");
            assert!(u.h().matmul(&u).max_abs_diff(&M::identity(k)) < 1e-10);
            assert!(s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn cholesky_factorizes_gram() {
        let a = pseudo_random(6, 4, 8);
        let g = a.h().matmul(&a);
        let l = g.cholesky().unwrap();
        assert!(l.matmul(&l.h()).max_abs_diff(&g) < 1e-12);
        for r in 0..4 {
            for c in r + 1..4 {
                assert_eq!(l[(r, c)], c64z());
            }
        }
    }

    fn c64z() -> Complex64 {
        c(0.0, 0.0)
    }

    #[test]
    fn pinv_of_invertible_matches_inverse() {
        let a = pseudo_random(4, 4, 21);
        assert!(a.pinv(1e-12).max_abs_diff(&a.inverse().unwrap()) < 1e-9);
    }

    #[test]
    fn right_least_squares_consistent_system() {
        let l = pseudo_random(4, 3, 5);
        let s = pseudo_random(3, 50, 6);
        let y = l.matmul(&s);
        let got = right_least_squares(&y, &s).unwrap();
        assert!(got.max_abs_diff(&l) < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn conj_transpose_is_involution(seed in 0u64..10_000, r in 1usize..6, k in 1usize..6) {
                let a = pseudo_random(r, k, seed);
                prop_assert_eq!(a.h().h(), a);
            }

            #[test]
            fn product_adjoint_reverses(seed in 0u64..10_000, r in 1usize..5, k in 1usize..5, n in 1usize..5) {
                let a = pseudo_random(r, k, seed);
                let b = pseudo_random(k, n, seed + 1);
                let lhs = a.matmul(&b).h();
                let rhs = b.h().matmul(&a.h());
                prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
            }

            #[test]
            fn least_squares_beats_perturbations(seed in 0u64..10_000, scale in 1e-3f64..1.0) {
                // Tall system A x = b, x from normal equations.
                let a = pseudo_random(8, 3, seed);
                let b = pseudo_random(8, 1, seed + 7);
                let x = a.h().matmul(&a).solve(&a.h().matmul(&b)).unwrap();
                let best = (&a.matmul(&x) - &b).frobenius_norm();
                let y = &x + &pseudo_random(3, 1, seed + 13).scale_real(scale);
                let other = (&a.matmul(&y) - &b).frobenius_norm();
                prop_assert!(best <= other + 1e-12);
            }
        }
    }
}
