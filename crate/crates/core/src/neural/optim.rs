//! Optimizers and the mini-batch training loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::RandomSource;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub shuffle_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            shuffle_seed: 7,
        }
    }
}

impl TrainingConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.epochs == 0 {
            v.push("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            v.push("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push("learning_rate must be positive".into());
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean training loss of each epoch.
    pub loss_curve: Vec<f64>,
    pub final_loss: f64,
    pub param_count: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub enum Optimizer<T: Real> {
    Adam {
        lr: T,
        beta1: T,
        beta2: T,
        eps: T,
        m: Vec<T>,
        v: Vec<T>,
        t: i32,
    },
    Sgd {
        lr: T,
    },
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam {
                lr: T::lit(lr),
                beta1: T::lit(0.9),
                beta2: T::lit(0.999),
                eps: T::lit(1e-8),
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
                t: 0,
            },
            OptimizerKind::Sgd => Optimizer::Sgd { lr: T::lit(lr) },
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), grads.len());
        match self {
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                assert_eq!(m.len(), params.len());
                *t += 1;
                let c1 = T::one() - beta1.powi(*t);
                let c2 = T::one() - beta2.powi(*t);
                for i in 0..params.len() {
                    let g = grads[i];
                    m[i] = *beta1 * m[i] + (T::one() - *beta1) * g;
                    v[i] = *beta2 * v[i] + (T::one() - *beta2) * g * g;
                    let mh = m[i] / c1;
                    let vh = v[i] / c2;
                    params[i] -= *lr * mh / (vh.sqrt() + *eps);
                }
            }
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= *lr * *g;
                }
            }
        }
    }
}

/// Mini-batch training. `batch` receives the current parameters and the
/// sample indices of one batch, writes the gradient of the batch-mean loss
/// into the zeroed buffer and returns that loss.
pub fn fit<T: Real>(
    params: &mut [T],
    n_samples: usize,
    tcfg: &TrainingConfig,
    mut batch: impl FnMut(&[T], &[usize], &mut [T]) -> Result<T>,
) -> Result<TrainingReport> {
    let v = tcfg.violations();
    if !v.is_empty() {
        return invalid(v.join("; "));
    }
    if n_samples == 0 {
        return invalid("empty training set");
    }
    let start = Instant::now();
    let mut opt = Optimizer::new(tcfg.optimizer, tcfg.learning_rate, params.len());
    let shuffle = RandomSource::new(tcfg.shuffle_seed);
    let mut grad = vec![T::zero(); params.len()];
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut curve = Vec::with_capacity(tcfg.epochs);
    let mut last = f64::NAN;
    for epoch in 0..tcfg.epochs {
        shuffle.derive_indexed("epoch", epoch as u64).shuffle(&mut order);
        let mut total = 0.0;
        for (b, idx) in order.chunks(tcfg.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = T::zero());
            let loss = batch(params, idx, &mut grad)?.as_f64();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged {
                    epoch,
                    batch: b,
                    last_loss: last,
                });
            }
            last = loss;
            total += loss * idx.len() as f64;
            opt.step(params, &grad);
        }
        curve.push(total / n_samples as f64);
    }
    Ok(TrainingReport {
        final_loss: *curve.last().unwrap(),
        loss_curve: curve,
        param_count: params.len(),
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
