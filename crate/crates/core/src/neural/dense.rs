//! Fully connected tanh network (linear output layer).

use crate::error::{invalid, Result};
use crate::rng::RandomSource;
use crate::scalar::Real;

/// Layer `i` stores `W_i` (`out x in`, row-major) followed by `b_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T: Real> {
    pub sizes: Vec<usize>,
    pub params: Vec<T>,
}

/// Per-layer activations of one forward pass (index 0 is the input).
#[derive(Clone, Debug, Default)]
pub struct MlpTrace<T> {
    acts: Vec<Vec<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn param_count_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn new(sizes: &[usize], rng: &mut RandomSource) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return invalid("an MLP needs at least two non-empty layers");
        }
        let mut params = Vec::with_capacity(Self::param_count_for(sizes));
        for w in sizes.windows(2) {
            let a = T::lit((6.0 / (w[0] + w[1]) as f64).sqrt());
            params.extend((0..w[0] * w[1]).map(|_| rng.uniform(-a, a)));
            params.extend(std::iter::repeat_n(T::zero(), w[1]));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn forward_trace(&self, x: &[T], trace: &mut MlpTrace<T>) -> Vec<T> {
        assert_eq!(x.len(), self.input_dim());
        trace.acts.clear();
        trace.acts.push(x.to_vec());
        let layers = self.sizes.len() - 1;
        let mut off = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let wm = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let input = trace.acts.last().unwrap();
            let mut out: Vec<T> = (0..n_out)
                .map(|o| {
                    b[o] + wm[o * n_in..(o + 1) * n_in]
                        .iter()
                        .zip(input)
                        .map(|(a, b)| *a * *b)
                        .sum::<T>()
                })
                .collect();
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            trace.acts.push(out);
        }
        trace.acts.last().unwrap().clone()
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.forward_trace(x, &mut MlpTrace::default())
    }

    /// Accumulates parameter gradients for upstream `g` and returns the input gradient.
    pub fn backward(&self, trace: &MlpTrace<T>, g: &[T], grad: &mut [T]) -> Vec<T> {
        assert_eq!(g.len(), self.output_dim());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = g.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                let a = &trace.acts[l + 1];
                for (d, &av) in delta.iter_mut().zip(a) {
                    *d *= T::one() - av * av;
                }
            }
            let o = offsets[l];
            let input = &trace.acts[l];
            let wm = &self.params[o..o + n_in * n_out];
            for j in 0..n_out {
                let dj = delta[j];
                for i in 0..n_in {
                    grad[o + j * n_in + i] += dj * input[i];
                }
                grad[o + n_in * n_out + j] += dj;
            }
            let mut prev = vec![T::zero(); n_in];
            for j in 0..n_out {
                for i in 0..n_in {
                    prev[i] += wm[j * n_in + i] * delta[j];
                }
            }
            delta = prev;
        }
        delta
    }
}
