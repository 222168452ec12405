use super::params::{Forward, Mode, ParamGroup, ParamId, ParamKind, ParamStore};
use crate::autodiff::{Float, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Per-channel batch normalization for `[B, C, ...]` activations.
///
/// Train mode normalizes with batch statistics and folds them into the
/// running estimates (`running = (1 - momentum) running + momentum batch`,
/// unbiased variance). Eval mode uses the running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm3d {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm3d {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        name: &str,
        channels: usize,
        group: ParamGroup,
    ) -> Self {
        let kind = ParamKind::Trainable(group);
        BatchNorm3d {
            channels,
            gamma: store.add(format!("{name}.gamma"), Tensor::ones([channels]), kind),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([channels]), kind),
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros([channels]),
                ParamKind::Buffer,
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::ones([channels]),
                ParamKind::Buffer,
            ),
            momentum: DEFAULT_MOMENTUM,
            eps: DEFAULT_EPS,
        }
    }

    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let shape = fw.tape.shape(x);
        if shape.len() < 2 || shape[1] != self.channels {
            return Err(Error::shape(
                "batch_norm",
                format!("expected {} channels, got input {shape:?}", self.channels),
            ));
        }
        let per_channel = shape[0] * shape[2..].iter().product::<usize>();
        let gamma = fw.param(self.gamma);
        let beta = fw.param(self.beta);
        let eps = F::from_f64_lossy(self.eps);
        match fw.mode() {
            Mode::Train => {
                let (y, mean, var) = fw.tape.batch_norm_train(x, gamma, beta, eps)?;
                let m = F::from_f64_lossy(self.momentum);
                let keep = F::one() - m;
                let unbias = if per_channel > 1 {
                    F::from_usize(per_channel).unwrap() / F::from_usize(per_channel - 1).unwrap()
                } else {
                    F::one()
                };
                let store = fw.store_mut();
                for (r, &b) in store.get_mut(self.running_mean).data_mut().iter_mut().zip(&mean) {
                    *r = keep * *r + m * b;
                }
                for (r, &b) in store.get_mut(self.running_var).data_mut().iter_mut().zip(&var) {
                    *r = keep * *r + m * b * unbias;
                }
                Ok(y)
            }
            Mode::Eval => {
                let store = fw.store();
                let rm = store.get(self.running_mean).data().to_vec();
                let rv = store.get(self.running_var).data().to_vec();
                fw.tape.batch_norm_eval(x, gamma, beta, &rm, &rv, eps)
            }
        }
    }
}
