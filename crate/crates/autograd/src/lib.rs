//! Minimal reverse-mode autodiff over dense `f32`/`f64` tensors.
//!
//! The crate provides exactly the pieces a multi-scale convolutional network
//! with attention needs: convolutions, batch normalization, bilinear
//! resampling, batched matrix products, row softmax, affine maps and a binary
//! cross-entropy loss, plus an Adam optimizer and a named parameter store.
//! Model-specific operations can be added through [`CustomOp`].

pub mod kernels;
pub mod nn;
pub mod optim;
pub mod params;
pub mod probe;
mod scalar;
mod tensor;
mod var;

pub use params::{Builder, Entry, ParamId, ParamStore};
pub use scalar::{gemm, Scalar};
pub use tensor::Tensor;
pub use var::{CustomOp, Gradients, Var};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
