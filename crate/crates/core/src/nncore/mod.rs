//! Dense-tensor numerical core: f64 tensors, reverse-mode differentiation,
//! the layers the pipeline's networks are made of, AdamW, and the
//! checkpoint container.

pub mod autograd;
pub mod checkpoint;
pub mod init;
pub mod layers;
pub mod ops;
pub mod optim;
mod tensor;

pub use autograd::{backward, is_grad_enabled, no_grad, Gradients};
pub use init::{HasParams, InitSpec, Parameter};
pub use optim::{AdamW, AdamWConfig};
pub use tensor::Tensor;
