//! Minimal reverse-mode automatic differentiation over `f64` tensors.
//!
//! Only the operations the segmentation network needs are provided. The
//! convolution kernels lower to `matrixmultiply` GEMM through im2col.

mod graph;
pub mod kernels;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use kernels::ConvGeom;
pub use tensor::Tensor;
