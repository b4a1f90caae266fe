//! The 2-N_h-2 tanh sub-network and banks of them applied lane-wise to
//! complex signals.
//!
//! Flat parameter order of one sub-network: `W1` (`N_h x 2`, row-major),
//! `b1` (`N_h`), `W2` (`N_h x 2`, row `k` holds hidden `k` to outputs 0 and
//! 1), `b2` (2).

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::ComplexMatrix;
use crate::rng::RandomSource;
use crate::scalar::Real;

pub fn tanh_act<T: Real>(x: T) -> T {
    x.tanh()
}

/// `5 N_h + 2`.
pub const fn subnn_param_count(n_h: usize) -> usize {
    5 * n_h + 2
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    Glorot,
    /// Hidden units 0 and 1 carry `tanh(eps x)` for the real and imaginary
    /// part and the output layer divides by `eps`; other weights are zero.
    NearIdentity { eps: f64 },
}

/// Writes freshly initialized parameters into `p`.
pub fn init_subnn<T: Real>(p: &mut [T], n_h: usize, init: Init, rng: &mut RandomSource) {
    assert_eq!(p.len(), subnn_param_count(n_h));
    p.iter_mut().for_each(|v| *v = T::zero());
    match init {
        Init::Glorot => {
            let a1 = T::lit((6.0 / (2 + n_h) as f64).sqrt());
            for v in &mut p[..2 * n_h] {
                *v = rng.uniform(-a1, a1);
            }
            for v in &mut p[3 * n_h..5 * n_h] {
                *v = rng.uniform(-a1, a1);
            }
        }
        Init::NearIdentity { eps } => {
            assert!(n_h >= 2, "near-identity init needs two hidden units");
            let e = T::lit(eps);
            p[0] = e;
            p[3] = e;
            p[3 * n_h] = e.recip();
            p[3 * n_h + 3] = e.recip();
        }
    }
}

/// One forward pass; writes the hidden activations into `h`.
#[inline]
pub fn subnn_forward_into<T: Real>(p: &[T], n_h: usize, c: [T; 2], h: &mut [T]) -> [T; 2] {
    let (w1, rest) = p.split_at(2 * n_h);
    let (b1, rest) = rest.split_at(n_h);
    let (w2, b2) = rest.split_at(2 * n_h);
    let mut out = [b2[0], b2[1]];
    for k in 0..n_h {
        let hk = tanh_act(w1[2 * k] * c[0] + w1[2 * k + 1] * c[1] + b1[k]);
        h[k] = hk;
        out[0] += w2[2 * k] * hk;
        out[1] += w2[2 * k + 1] * hk;
    }
    out
}

/// Accumulates parameter gradients into `grad` and returns the input gradient.
#[inline]
pub fn subnn_backward_into<T: Real>(p: &[T], n_h: usize, c: [T; 2], h: &[T], g: [T; 2], grad: &mut [T]) -> [T; 2] {
    let w1 = &p[..2 * n_h];
    let w2 = &p[3 * n_h..5 * n_h];
    let (gw1, rest) = grad.split_at_mut(2 * n_h);
    let (gb1, rest) = rest.split_at_mut(n_h);
    let (gw2, gb2) = rest.split_at_mut(2 * n_h);
    gb2[0] += g[0];
    gb2[1] += g[1];
    let mut gin = [T::zero(); 2];
    for k in 0..n_h {
        let hk = h[k];
        gw2[2 * k] += g[0] * hk;
        gw2[2 * k + 1] += g[1] * hk;
        let gz = (w2[2 * k] * g[0] + w2[2 * k + 1] * g[1]) * (T::one() - hk * hk);
        gb1[k] += gz;
        gw1[2 * k] += gz * c[0];
        gw1[2 * k + 1] += gz * c[1];
        gin[0] += w1[2 * k] * gz;
        gin[1] += w1[2 * k + 1] * gz;
    }
    gin
}

/// A standalone sub-network.
#[derive(Clone, Debug, PartialEq)]
pub struct SubNN<T: Real> {
    pub n_h: usize,
    pub params: Vec<T>,
}

impl<T: Real> SubNN<T> {
    pub fn zeros(n_h: usize) -> Self {
        Self {
            n_h,
            params: vec![T::zero(); subnn_param_count(n_h)],
        }
    }

    pub fn new(n_h: usize, init: Init, rng: &mut RandomSource) -> Self {
        let mut nn = Self::zeros(n_h);
        init_subnn(&mut nn.params, n_h, init, rng);
        nn
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn w1(&self) -> &[T] {
        &self.params[..2 * self.n_h]
    }
    pub fn b1(&self) -> &[T] {
        &self.params[2 * self.n_h..3 * self.n_h]
    }
    pub fn w2(&self) -> &[T] {
        &self.params[3 * self.n_h..5 * self.n_h]
    }
    pub fn b2(&self) -> &[T] {
        &self.params[5 * self.n_h..]
    }
    pub fn b2_mut(&mut self) -> &mut [T] {
        let n = self.n_h;
        &mut self.params[5 * n..]
    }

    pub fn forward(&self, c: [T; 2]) -> [T; 2] {
        let mut h = vec![T::zero(); self.n_h];
        subnn_forward_into(&self.params, self.n_h, c, &mut h)
    }

    /// Returns `(parameter gradient, input gradient)` for upstream gradient `g`.
    pub fn backward(&self, c: [T; 2], g: [T; 2]) -> (Vec<T>, [T; 2]) {
        let mut h = vec![T::zero(); self.n_h];
        subnn_forward_into(&self.params, self.n_h, c, &mut h);
        let mut grad = vec![T::zero(); self.params.len()];
        let gin = subnn_backward_into(&self.params, self.n_h, c, &h, g, &mut grad);
        (grad, gin)
    }
}

/// Lane-wise application of sub-networks to the rows of a complex block,
/// with fixed input/output scales: `out = out_scale * NN(x / in_scale)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bank {
    pub n_h: usize,
    pub lanes: usize,
    /// One sub-network serves every lane.
    pub shared: bool,
    pub in_scale: f64,
    pub out_scale: f64,
}

/// Hidden activations saved by [`Bank::forward`].
#[derive(Clone, Debug, Default)]
pub struct BankCache<T> {
    hidden: Vec<T>,
}

impl Bank {
    pub fn new(n_h: usize, lanes: usize, shared: bool, in_scale: f64, out_scale: f64) -> Self {
        Self {
            n_h,
            lanes,
            shared,
            in_scale,
            out_scale,
        }
    }

    pub fn nets(&self) -> usize {
        if self.shared {
            1
        } else {
            self.lanes
        }
    }

    pub fn param_count(&self) -> usize {
        self.nets() * subnn_param_count(self.n_h)
    }

    fn net_of(&self, lane: usize) -> usize {
        if self.shared {
            0
        } else {
            lane
        }
    }

    pub fn init<T: Real>(&self, p: &mut [T], init: Init, rng: &mut RandomSource) {
        let m = subnn_param_count(self.n_h);
        for (i, chunk) in p.chunks_exact_mut(m).enumerate() {
            init_subnn(chunk, self.n_h, init, &mut rng.derive_indexed("subnn", i as u64));
        }
    }

    fn check<T: Real>(&self, p: &[T], x: &ComplexMatrix<T>) -> Result<()> {
        if p.len() != self.param_count() {
            return invalid(format!(
                "bank expects {} parameters, got {}",
                self.param_count(),
                p.len()
            ));
        }
        if x.rows() != self.lanes {
            return invalid(format!("bank has {} lanes, block has {} rows", self.lanes, x.rows()));
        }
        Ok(())
    }

    pub fn forward<T: Real>(
        &self,
        p: &[T],
        x: &ComplexMatrix<T>,
        cache: Option<&mut BankCache<T>>,
    ) -> Result<ComplexMatrix<T>> {
        self.check(p, x)?;
        let m = subnn_param_count(self.n_h);
        let (rows, cols) = x.shape();
        let si = T::lit(self.in_scale).recip();
        let so = T::lit(self.out_scale);
        let mut scratch = vec![T::zero(); self.n_h];
        let mut out = ComplexMatrix::zeros(rows, cols);
        let mut hidden = cache.map(|c| {
            c.hidden.clear();
            c.hidden.resize(rows * cols * self.n_h, T::zero());
            &mut c.hidden
        });
        for r in 0..rows {
            let net = &p[self.net_of(r) * m..][..m];
            for (j, (z, o)) in x.row(r).iter().zip(out.row_mut(r)).enumerate() {
                let h = match hidden.as_deref_mut() {
                    Some(hd) => &mut hd[(r * cols + j) * self.n_h..][..self.n_h],
                    None => &mut scratch[..],
                };
                let y = subnn_forward_into(net, self.n_h, [z.re * si, z.im * si], h);
                *o = Complex::new(y[0] * so, y[1] * so);
            }
        }
        Ok(out)
    }

    /// Accumulates into `grad` and returns the gradient with respect to `x`.
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        x: &ComplexMatrix<T>,
        cache: &BankCache<T>,
        g_out: &ComplexMatrix<T>,
        grad: &mut [T],
    ) -> Result<ComplexMatrix<T>> {
        self.check(p, x)?;
        if g_out.shape() != x.shape() || cache.hidden.len() != x.rows() * x.cols() * self.n_h {
            return invalid("bank backward shapes do not match the cached forward pass");
        }
        let m = subnn_param_count(self.n_h);
        let cols = x.cols();
        let si = T::lit(self.in_scale).recip();
        let so = T::lit(self.out_scale);
        let mut g_in = ComplexMatrix::zeros(x.rows(), cols);
        for r in 0..x.rows() {
            let k = self.net_of(r);
            let net = &p[k * m..][..m];
            let gnet = &mut grad[k * m..][..m];
            for j in 0..cols {
                let z = x[(r, j)];
                let g = g_out[(r, j)];
                let h = &cache.hidden[(r * cols + j) * self.n_h..][..self.n_h];
                let gi = subnn_backward_into(net, self.n_h, [z.re * si, z.im * si], h, [g.re * so, g.im * so], gnet);
                g_in[(r, j)] = Complex::new(gi[0] * si, gi[1] * si);
            }
        }
        Ok(g_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_net(n_h: usize, seed: u64) -> SubNN<f64> {
        let mut rng = RandomSource::new(seed);
        let mut nn = SubNN::zeros(n_h);
        for v in &mut nn.params {
            *v = rng.uniform(-1.0, 1.0);
        }
        nn
    }

    #[test]
    fn tanh_values() {
        assert_eq!(tanh_act(0.0f64), 0.0);
        assert!((tanh_act(0.5f64) - 0.462_117).abs() < 1e-6);
        assert!((tanh_act(0.5f64) - (1.0 - (-1.0f64).exp()) / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(tanh_act(50.0f64), 1.0);
        assert_eq!(tanh_act(-50.0f64), -1.0);
        assert_eq!(tanh_act(1e4f32), 1.0);
    }

    #[test]
    fn param_counts() {
        for n_h in [2, 4, 6, 8, 10] {
            let nn = SubNN::<f64>::zeros(n_h);
            assert_eq!(nn.param_count(), 5 * n_h + 2);
            assert_eq!(
                nn.w1().len() + nn.b1().len() + nn.w2().len() + nn.b2().len(),
                nn.param_count()
            );
        }
    }

    #[test]
    fn zero_and_affine_floor() {
        let mut nn = SubNN::<f64>::zeros(4);
        assert_eq!(nn.forward([0.3, -2.0]), [0.0, 0.0]);
        nn.b2_mut().copy_from_slice(&[0.7, -0.1]);
        assert_eq!(nn.forward([5.0, 1.0]), [0.7, -0.1]);
    }

    #[test]
    fn small_input_matches_linearization() {
        let nn = random_net(6, 1);
        let n = nn.n_h;
        let (w1, b1, w2) = (nn.w1(), nn.b1(), nn.w2());
        let c = [1e-6, -0.7e-6];
        let y0 = nn.forward([0.0, 0.0]);
        let y = nn.forward(c);
        for o in 0..2 {
            let mut lin = 0.0;
            for k in 0..n {
                let sech2 = 1.0 - b1[k].tanh().powi(2);
                lin += w2[2 * k + o] * sech2 * (w1[2 * k] * c[0] + w1[2 * k + 1] * c[1]);
            }
            let d = y[o] - y0[o];
            assert!((d - lin).abs() <= 1e-6 * lin.abs().max(1e-12), "{d} vs {lin}");
        }
    }

    #[test]
    fn near_identity_is_close_to_identity() {
        let nn = SubNN::<f64>::new(4, Init::NearIdentity { eps: 1e-3 }, &mut RandomSource::new(0));
        let y = nn.forward([0.8, -1.2]);
        assert!((y[0] - 0.8).abs() < 1e-6 && (y[1] + 1.2).abs() < 1e-6);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut worst: f64 = 0.0;
        let mut rng = RandomSource::new(2);
        for trial in 0..100 {
            let nn = random_net(1 + trial % 10, 100 + trial as u64);
            let c = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
            let g = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
            let (grad, gin) = nn.backward(c, g);
            let f = |nn: &SubNN<f64>, c: [f64; 2]| {
                let y = nn.forward(c);
                g[0] * y[0] + g[1] * y[1]
            };
            let h = 1e-6;
            for i in 0..nn.param_count() {
                let mut a = nn.clone();
                let mut b = nn.clone();
                a.params[i] += h;
                b.params[i] -= h;
                let fd = (f(&a, c) - f(&b, c)) / (2.0 * h);
                worst = worst.max((fd - grad[i]).abs() / fd.abs().max(1e-3));
            }
            for i in 0..2 {
                let mut cp = c;
                let mut cm = c;
                cp[i] += h;
                cm[i] -= h;
                let fd = (f(&nn, cp) - f(&nn, cm)) / (2.0 * h);
                worst = worst.max((fd - gin[i]).abs() / fd.abs().max(1e-3));
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn zero_upstream_and_saturation() {
        let nn = random_net(5, 3);
        let (grad, gin) = nn.backward([0.4, 0.1], [0.0, 0.0]);
        assert!(grad.iter().all(|&v| v == 0.0) && gin == [0.0, 0.0]);
        let mut sat = nn.clone();
        for v in &mut sat.params[..10] {
            *v = 100.0;
        }
        let (grad, _) = sat.backward([1.0, 1.0], [1.0, 1.0]);
        assert!(grad[..15].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn shared_bank_matches_tied_full_bank() {
        let n_h = 3;
        let m = subnn_param_count(n_h);
        let mut rng = RandomSource::new(4);
        let net: Vec<f64> = (0..m).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let full = Bank::new(n_h, 4, false, 0.5, 2.0);
        let shared = Bank::new(n_h, 4, true, 0.5, 2.0);
        let tied: Vec<f64> = net.iter().cycle().take(4 * m).copied().collect();
        let x = ComplexMatrix::from_fn(4, 7, |i, j| Complex::new((i as f64 - j as f64) * 0.1, 0.3));
        let mut cf = BankCache::default();
        let mut cs = BankCache::default();
        let yf = full.forward(&tied, &x, Some(&mut cf)).unwrap();
        let ys = shared.forward(&net, &x, Some(&mut cs)).unwrap();
        assert_eq!(yf, ys);
        let g = ComplexMatrix::from_fn(4, 7, |i, j| Complex::new(0.2 * i as f64, -0.1 * j as f64));
        let mut gf = vec![0.0; 4 * m];
        let mut gs = vec![0.0; m];
        let xf = full.backward(&tied, &x, &cf, &g, &mut gf).unwrap();
        let xs = shared.backward(&net, &x, &cs, &g, &mut gs).unwrap();
        assert_eq!(xf, xs);
        for i in 0..m {
            let sum: f64 = (0..4).map(|l| gf[l * m + i]).sum();
            assert!((sum - gs[i]).abs() < 1e-12);
        }
    }
}
