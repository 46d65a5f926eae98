//! Dense f32 tensors with tape-based reverse-mode differentiation, the op
//! set used by the depth forecasting pipeline, Adam, and `DSQ1`
//! checkpoints.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod shape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::sample::{identity_grid, pixel_to_normalized};
pub use optim::{adam_step, Adam, AdamConfig, AdamState, Param, VarStore};
pub use tensor::{grad_enabled, no_grad, BackwardFn, NoGradGuard, Tensor};
