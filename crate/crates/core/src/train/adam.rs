use crate::autodiff::Float;
use crate::error::{Error, Result};
use crate::nn::{ParamGrads, ParamGroup, ParamKind, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of `param` in place. `step` counts from 1.
#[allow(clippy::too_many_arguments)]
pub fn adam_step<F: Float>(
    param: &mut [F],
    grad: &[F],
    m: &mut [F],
    v: &mut [F],
    step: u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = param.len();
    if grad.len() != n || m.len() != n || v.len() != n {
        return Err(Error::shape(
            "adam_step",
            format!(
                "parameter {n}, gradient {}, moments {}/{} elements",
                grad.len(),
                m.len(),
                v.len()
            ),
        ));
    }
    if step == 0 {
        return Err(Error::Input("adam step counter starts at 1".into()));
    }
    let f = F::from_f64_lossy;
    let (b1, b2) = (f(cfg.beta1), f(cfg.beta2));
    let c1 = f(1.0 - cfg.beta1.powi(step as i32));
    let c2 = f(1.0 - cfg.beta2.powi(step as i32));
    let (lr, eps) = (f(lr), f(cfg.eps));
    for i in 0..n {
        let g = grad[i];
        m[i] = b1 * m[i] + (F::one() - b1) * g;
        v[i] = b2 * v[i] + (F::one() - b2) * g * g;
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        param[i] = param[i] - lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

/// Adam over a [`ParamStore`] with one learning rate per parameter group.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub lr_backbone: f64,
    pub lr_fresh: f64,
    step: u64,
    moments: Vec<Option<(Vec<F>, Vec<F>)>>,
}

impl<F: Float> Adam<F> {
    pub fn new(config: AdamConfig, lr_backbone: f64, lr_fresh: f64) -> Self {
        Adam { config, lr_backbone, lr_fresh, step: 0, moments: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Backbone => self.lr_backbone,
            ParamGroup::Fresh => self.lr_fresh,
        }
    }

    /// Applies one update to every trainable parameter that has a gradient.
    /// Groups with learning rate 0 are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &ParamGrads<F>) -> Result<()> {
        self.step += 1;
        self.moments.resize(store.len(), None);
        for id in store.ids().collect::<Vec<_>>() {
            let ParamKind::Trainable(group) = store.entry(id).kind else { continue };
            let Some(g) = grads.get(id) else { continue };
            let lr = self.lr(group);
            if lr == 0.0 {
                continue;
            }
            let n = store.get(id).numel();
            let (m, v) = self.moments[id.index()]
                .get_or_insert_with(|| (vec![F::zero(); n], vec![F::zero(); n]));
            adam_step(store.get_mut(id).data_mut(), g.data(), m, v, self.step, lr, &self.config)?;
        }
        Ok(())
    }
}
