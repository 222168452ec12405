//! Reverse-mode automatic differentiation over dense row-major tensors.

pub mod aqat;
mod float;
pub mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use float::{DType, Float, Trans};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{numel, Tensor};
