//! Reverse-mode automatic differentiation on dense tensors.
//!
//! The design is a flat arena tape: ops execute eagerly, record themselves,
//! and `backward` replays in reverse. Generic over [`Scalar`] so the same
//! graph code runs in f32 for training and f64 for gradient checking.

pub mod gradcheck;
pub mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use scalar::Scalar;
pub use tape::{GradBuffer, Tape, TapeError, Val};
pub use tensor::Tensor;
