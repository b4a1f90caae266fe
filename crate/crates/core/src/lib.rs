//! THz hybrid-beamforming link simulator with hardware impairments and
//! neural-network compensation.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chain;
pub mod channel;
pub mod coding;
pub mod config;
pub mod error;
pub mod impairments;
pub mod io;
pub mod linalg;
pub mod modem;
pub mod neural;
pub mod rng;
pub mod scalar;
pub mod stage1;
pub mod stage2;

pub use error::{Error, Result};
pub use linalg::ComplexMatrix;
pub use rng::RandomSource;
pub use scalar::Real;

pub type CMatrix = ComplexMatrix<f64>;
pub type CMatrix32 = ComplexMatrix<f32>;
pub type Link = chain::LinkRealization<f64>;
