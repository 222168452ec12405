//! Define-by-run gradient tape.
//!
//! Every operation appends a node holding its forward value and, when any
//! input requires a gradient, a backward rule. Nodes are only ever appended,
//! so the node order is a topological order and [`Tape::backward`] can replay
//! the rules in reverse.

use std::sync::atomic::{AtomicU32, Ordering};

use super::float::Float;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

/// What a backward rule sees when it runs.
pub(crate) struct BackwardArgs<'a, F> {
    nodes: &'a [Node<F>],
    inputs: &'a [Var],
    pub needs: &'a [bool],
    pub output: &'a Tensor<F>,
    pub grad: &'a [F],
}

impl<F> BackwardArgs<'_, F> {
    pub fn input(&self, i: usize) -> &Tensor<F> {
        &self.nodes[self.inputs[i].index()].value
    }
}

pub(crate) type BackwardFn<F> = Box<dyn Fn(&BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>>>;

pub(crate) struct Node<F> {
    op: &'static str,
    value: Tensor<F>,
    inputs: Vec<Var>,
    requires_grad: bool,
    backward: Option<BackwardFn<F>>,
}

/// Records operations of one forward pass.
pub struct Tape<F> {
    id: u32,
    nodes: Vec<Node<F>>,
    fault: Option<String>,
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), fault: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test hook: scales every gradient produced by operations named `op`
    /// by 1.5, so gradient checks can be shown to catch a broken rule.
    pub fn inject_fault(&mut self, op: impl Into<String>) {
        self.fault = Some(op.into());
    }

    /// Adds a leaf. Leaves that require a gradient receive one from
    /// [`Tape::backward`] (zeros if the root does not depend on them).
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(Node { op: "leaf", value, inputs: Vec::new(), requires_grad, backward: None })
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor<F> {
        &self.node(var).value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.node(var).value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.node(var).requires_grad
    }

    pub fn op_name(&self, var: Var) -> &'static str {
        self.node(var).op
    }

    fn node(&self, var: Var) -> &Node<F> {
        assert_eq!(var.tape, self.id, "variable belongs to a different tape");
        &self.nodes[var.index()]
    }

    fn push(&mut self, node: Node<F>) -> Var {
        let index = u32::try_from(self.nodes.len()).expect("tape overflow");
        self.nodes.push(node);
        Var { tape: self.id, index }
    }

    /// Appends an operation result. The backward rule is dropped when no
    /// input requires a gradient.
    pub(crate) fn record<B>(
        &mut self,
        op: &'static str,
        value: Tensor<F>,
        inputs: &[Var],
        backward: B,
    ) -> Var
    where
        B: Fn(&BackwardArgs<'_, F>) -> Vec<Option<Vec<F>>> + 'static,
    {
        let requires_grad = inputs.iter().any(|&v| self.requires_grad(v));
        let backward: Option<BackwardFn<F>> =
            if requires_grad { Some(Box::new(backward)) } else { None };
        self.push(Node { op, value, inputs: inputs.to_vec(), requires_grad, backward })
    }

    /// Reverse accumulation from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<F>> {
        if root.tape != self.id || root.index() >= self.nodes.len() {
            return Err(Error::Graph("backward root is not on this tape".into()));
        }
        let root_node = &self.nodes[root.index()];
        if !root_node.value.is_scalar() {
            return Err(Error::Graph(format!(
                "backward root must be a scalar, got shape {:?}",
                root_node.value.shape()
            )));
        }
        if !root_node.requires_grad {
            return Err(Error::Graph(
                "backward root does not depend on any tensor that requires a gradient".into(),
            ));
        }

        let mut grads: Vec<Option<Vec<F>>> = vec![None; root.index() + 1];
        grads[root.index()] = Some(vec![F::one()]);
        let half = F::from_f64_lossy(1.5);

        for i in (0..=root.index()).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(|&v| self.requires_grad(v)).collect();
            let args = BackwardArgs {
                nodes: &self.nodes,
                inputs: &node.inputs,
                needs: &needs,
                output: &node.value,
                grad: &grad,
            };
            let mut input_grads = backward(&args);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op);
            if self.fault.as_deref() == Some(node.op) {
                for g in input_grads.iter_mut().flatten() {
                    g.iter_mut().for_each(|v| *v *= half);
                }
            }
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.requires_grad(*input) {
                    continue;
                }
                match &mut grads[input.index()] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        Ok(Gradients { tape: self.id, grads, shapes: self.leaf_shapes(root.index()) })
    }

    fn leaf_shapes(&self, upto: usize) -> Vec<Option<Vec<usize>>> {
        self.nodes[..=upto]
            .iter()
            .map(|n| (n.backward.is_none() && n.requires_grad).then(|| n.value.shape().to_vec()))
            .collect()
    }
}

/// Gradients of a root with respect to the leaves of a tape.
pub struct Gradients<F> {
    tape: u32,
    grads: Vec<Option<Vec<F>>>,
    shapes: Vec<Option<Vec<usize>>>,
}

impl<F: Float> Gradients<F> {
    /// Gradient of a leaf that requires one. Returns `None` for leaves that do
    /// not require a gradient and for intermediate nodes.
    pub fn get(&self, var: Var) -> Option<Tensor<F>> {
        assert_eq!(var.tape, self.tape, "variable belongs to a different tape");
        let shape = self.shapes.get(var.index())?.as_ref()?;
        let data = match &self.grads[var.index()] {
            Some(g) => g.clone(),
            None => vec![F::zero(); shape.iter().product()],
        };
        Some(Tensor::new(shape.clone(), data).expect("gradient shape"))
    }
}
