pub mod aggregation;
pub mod autodiff;
pub mod backbone;
pub mod check;
pub mod cli;
pub mod data;
pub mod error;
pub mod nn;
pub mod parallel;
pub mod scoring;
pub mod train;

pub use autodiff::{Float, Gradients, Tape, Tensor, Var};
pub use error::{Error, Result};
