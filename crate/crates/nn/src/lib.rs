//! Reverse-mode automatic differentiation over NCHW `f32` tensors.
//!
//! Only what a U-Net regressor needs: 2-D convolution (plus a 2×2 transposed
//! variant), batch norm, ReLU, 2×2 max pooling, bilinear ×2 upsampling,
//! channel concat/slice, a few element-wise ops, a masked ℓ1 loss, and Adam.
//! Parameters live in a [`ParamStore`] and persist as SIGW v1 files.

mod error;
mod kernels;

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{BatchStats, Gradients, Graph, Var};
pub use layers::{BatchNorm2d, Conv2d, ConvTranspose2, Mode};
pub use optim::{Adam, DecayMode};
pub use params::{AdamState, BufferId, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
