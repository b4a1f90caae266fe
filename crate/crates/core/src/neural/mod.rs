//! Small neural-network engine: tanh sub-networks, a dense MLP, optimizers
//! and a deterministic mini-batch loop.

mod dense;
mod optim;
mod subnn;

pub use dense::{Mlp, MlpTrace};
pub use optim::{fit, Optimizer, OptimizerKind, TrainingConfig, TrainingReport};
pub use subnn::{
    init_subnn, subnn_backward_into, subnn_forward_into, subnn_param_count, tanh_act, Bank, BankCache, Init, SubNN,
};
