use super::functional::Triple;
use crate::autodiff::{Float, Tape, Var};
use crate::error::{Error, Result};

/// Averages `[B, C, T, H, W]` over time and space, giving `[B, C]`.
pub fn global_avg_pool<F: Float>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 5 {
        return Err(Error::shape("global_avg_pool", format!("expected 5-D input, got {shape:?}")));
    }
    let flat = tape.reshape(x, &[shape[0], shape[1], shape[2] * shape[3] * shape[4]])?;
    tape.mean_axis(flat, 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool3d {
    pub kernel: Triple,
    pub stride: Triple,
    pub pad: Triple,
}

impl MaxPool3d {
    pub fn forward<F: Float>(&self, tape: &mut Tape<F>, x: Var) -> Result<Var> {
        tape.max_pool3d(x, self.kernel, self.stride, self.pad)
    }
}

/// Softmax across clips for every feature index: `raw: [N, D]`, each of the
/// `D` columns of the result sums to one.
pub fn softmax_over_clips<F: Float>(tape: &mut Tape<F>, raw: Var) -> Result<Var> {
    if tape.shape(raw).len() != 2 {
        return Err(Error::shape(
            "softmax_over_clips",
            format!("expected [N, D], got {:?}", tape.shape(raw)),
        ));
    }
    tape.softmax(raw, 0)
}
