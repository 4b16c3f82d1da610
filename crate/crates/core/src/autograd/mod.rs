//! Minimal define-by-run reverse-mode automatic differentiation over dense
//! `f64` tensors. Only the operations the tiny language model needs are
//! provided.

mod gemm;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
