use rand::Rng;

use super::params::{uniform_fan_in, Forward, ParamGroup, ParamId, ParamKind, ParamStore};
use crate::autodiff::{Float, Tensor, Var};
use crate::error::{Error, Result};

/// Fully connected layer, `y = x W^T + b` for `x: [B, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<F: Float>(
        store: &mut ParamStore<F>,
        name: &str,
        in_features: usize,
        out_features: usize,
        group: ParamGroup,
        rng: &mut impl Rng,
    ) -> Self {
        let kind = ParamKind::Trainable(group);
        let weight = store.add(
            format!("{name}.weight"),
            uniform_fan_in(rng, &[out_features, in_features], in_features),
            kind,
        );
        let bias =
            store.add(format!("{name}.bias"), uniform_fan_in(rng, &[out_features], in_features), kind);
        Linear { in_features, out_features, weight, bias }
    }

    /// Sets weights and bias to zero.
    pub fn zero<F: Float>(&self, store: &mut ParamStore<F>) {
        for id in [self.weight, self.bias] {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = F::zero());
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_features * (self.in_features + 1)
    }

    pub fn forward<F: Float>(&self, fw: &mut Forward<'_, F>, x: Var) -> Result<Var> {
        let shape = fw.tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.in_features {
            return Err(Error::shape(
                "linear",
                format!("expected [B, {}], got {shape:?}", self.in_features),
            ));
        }
        let w = fw.param(self.weight);
        let b = fw.param(self.bias);
        let wt = fw.tape.transpose(w)?;
        let y = fw.tape.matmul(x, wt)?;
        // Row-broadcast of the bias as ones[B, 1] x b[1, out].
        let ones = fw.tape.constant(Tensor::ones([shape[0], 1]));
        let b_row = fw.tape.reshape(b, &[1, self.out_features])?;
        let bias = fw.tape.matmul(ones, b_row)?;
        fw.tape.add(y, bias)
    }
}
