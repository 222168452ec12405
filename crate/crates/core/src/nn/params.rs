//! Named parameter storage and the per-pass forward context.

use std::fmt;

use rand::Rng;

use crate::autodiff::{Float, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Optimizer group. The feature extractor plays the role of the pretrained
/// module and everything downstream of it is freshly initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Backbone,
    Fresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable(ParamGroup),
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, PartialEq)]
pub struct ParamEntry<F> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<F>,
}

/// Ordered collection of every tensor a model owns.
#[derive(Clone)]
pub struct ParamStore<F> {
    entries: Vec<ParamEntry<F>>,
}

impl<F: Float> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> fmt::Debug for ParamStore<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamStore")
            .field("entries", &self.entries.len())
            .field("trainable", &self.count_trainable())
            .finish()
    }
}

impl<F: Float> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    /// Registers a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>, kind: ParamKind) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.entries.push(ParamEntry { name, kind, value });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<F>] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<F> {
        &self.entries[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Scalar count over trainable tensors.
    pub fn count_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.kind, ParamKind::Trainable(_)))
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn cast<G: Float>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), kind: e.kind, value: e.value.cast() })
                .collect(),
        }
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
///
/// Values are drawn in f64 so both precisions start from the same numbers.
pub fn uniform_fan_in<F: Float>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<F> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| F::from_f64_lossy(rng.gen_range(-bound..=bound)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: a fresh tape plus access to the parameters.
///
/// Each parameter is placed on the tape once, the first time a layer asks for
/// it, so its gradient sums over every use.
pub struct Forward<'s, F> {
    pub tape: Tape<F>,
    store: &'s mut ParamStore<F>,
    mode: Mode,
    param_grads: bool,
    bound: Vec<Option<Var>>,
}

impl<'s, F: Float> Forward<'s, F> {
    pub fn new(store: &'s mut ParamStore<F>, mode: Mode, param_grads: bool) -> Self {
        let bound = vec![None; store.len()];
        Forward { tape: Tape::new(), store, mode, param_grads, bound }
    }

    /// Training pass: batch statistics and parameter gradients.
    pub fn train(store: &'s mut ParamStore<F>) -> Self {
        Self::new(store, Mode::Train, true)
    }

    /// Inference pass: running statistics, nothing differentiable.
    pub fn eval(store: &'s mut ParamStore<F>) -> Self {
        Self::new(store, Mode::Eval, false)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<F> {
        self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let entry = &self.store.entries[id.0];
        let requires = self.param_grads && matches!(entry.kind, ParamKind::Trainable(_));
        let v = self.tape.leaf(entry.value.clone(), requires);
        self.bound[id.0] = Some(v);
        v
    }

    /// Backpropagates `root` and collects the gradient of every trainable
    /// parameter used in this pass.
    pub fn backward(&self, root: Var) -> Result<ParamGrads<F>> {
        let grads = self.tape.backward(root)?;
        let per_param = self.bound.iter().map(|v| v.and_then(|v| grads.get(v))).collect();
        Ok(ParamGrads { grads: per_param })
    }
}

/// Gradients indexed by [`ParamId`].
pub struct ParamGrads<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Float> ParamGrads<F> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}
