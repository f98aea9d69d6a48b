//! Dense tensors, tape-based reverse-mode differentiation, and the layers and
//! optimizer used by the alignment model.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! name the common instantiations.

mod check;
mod error;
mod gemm;
mod graph;
mod kernels;
pub mod layers;
mod params;
mod scalar;
mod sparse;
mod tensor;

pub use check::{grad_check, GradCheckReport, GRAD_CHECK_SAMPLES, NOISE_FACTOR};
pub use error::{Result, TensorError};
pub use gemm::{gemm, MatMut, MatRef};
pub use graph::{attention, attention_probs, concat_cols, concat_rows, gru_cell, sparse_matmul, Gradients, Graph, Var};
pub use kernels::{AttnLayout, AttnProbs};
pub use params::{normal, xavier_uniform, Adam, Parameter, ParameterStore};
pub use scalar::Scalar;
pub use sparse::Csr;
pub use tensor::{linear, softmax_rows, Tensor};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = Graph<f64>;
pub type Graph32 = Graph<f32>;
pub type ParameterStore64 = ParameterStore<f64>;
pub type ParameterStore32 = ParameterStore<f32>;
pub type Csr64 = Csr<f64>;
