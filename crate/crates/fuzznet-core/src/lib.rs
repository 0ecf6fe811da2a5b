//! Deep neuro-fuzzy networks: differentiable fuzzy inference (FIO) and fuzzy
//! pooling (FPO) layers on a small reverse-mode tensor core, plus dataset
//! ingestion, training, and a naive TSK reference implementation for
//! cross-checking the fused layers.
//!
//! Everything numeric is generic over [`Scalar`] (f32 or f64); the aliases at
//! the crate root fix f64, which is what the training pipeline uses.

pub mod data;
pub mod error;
pub mod fuzzy;
pub mod net;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod tsk;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Seeded generator used everywhere randomness is consumed.
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub type Tensor = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f64>;
