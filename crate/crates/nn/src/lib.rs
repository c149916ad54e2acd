//! Minimal CPU autodiff for small convolutional networks.
//!
//! Convolutions lower to im2col + GEMM; every op is differentiable through a
//! tape ([`Graph`]). Generic over `f32` and `f64` so that models trained in
//! single precision can be gradient-checked in double precision.

mod float;
mod graph;
mod kernels;
mod optim;
mod params;
mod tensor;

pub use float::Real;
pub use graph::{sigmoid_scalar, Gradients, Graph, Var};
pub use optim::{clip_grad_norm, cosine_lr, Adam};
pub use params::{lecun_uniform, sinusoidal_embedding, Bound, Conv2d, Linear, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("tensor `{0}` missing from checkpoint")]
    MissingTensor(String),
    #[error("unsupported dtype {0}")]
    Dtype(String),
    #[error(transparent)]
    SafeTensors(#[from] safetensors::SafeTensorError),
}
