//! Recorded computation graph and reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the node list itself is a topological order and the
//! backward sweep is a single reverse pass that visits each node once.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{GradientMap, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sum(Var),
    MeanAxis { x: Var, axis: usize },
    Softmax { x: Var, axis: usize },
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: [usize; 3],
        pad: [usize; 3],
    },
    CrossEntropy { logits: Var, label: usize, probs: Vec<T> },
}

impl<T> Op<T> {
    pub(crate) fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param(_) => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => vec![*a, *b],
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Gelu(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Reshape(x) => vec![*x],
            Op::MeanAxis { x, .. } | Op::Softmax { x, .. } | Op::Slice { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Conv3d { x, w, b, .. } => {
                let mut p = vec![*x, *w];
                p.extend(b.iter().copied());
                p
            }
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub(crate) value: Value<T>,
    pub(crate) op: Op<T>,
    pub(crate) needs_grad: bool,
}

/// A computation graph recorded during one forward pass.
///
/// Parameters are borrowed from a [`ParamStore`]; every other value is owned
/// by the graph.
pub struct Graph<'s, T> {
    store: &'s ParamStore<T>,
    pub(crate) nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
    training: bool,
    rng: ChaCha8Rng,
    stochastic: bool,
}

impl<'s, T: Scalar> Graph<'s, T> {
    /// Graph in evaluation mode: dropout and feature masking are disabled.
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            training: false,
            rng: ChaCha8Rng::seed_from_u64(0),
            stochastic: false,
        }
    }

    /// Graph in training mode; stochastic layers draw from a stream seeded by `seed`.
    pub fn training(store: &'s ParamStore<T>, seed: u64) -> Self {
        Self {
            training: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..Self::new(store)
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Record that this pass drew random numbers that affect its output.
    pub fn mark_stochastic(&mut self) {
        self.stochastic = true;
    }

    /// Whether any random draw influenced the recorded computation.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub(crate) fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; never receives a gradient entry in [`GradientMap`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push_raw(Value::Owned(t), Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        let needs = self.store.requires_grad(id);
        let v = self.push_raw(Value::Param(id), Op::Param(id), needs);
        self.param_nodes.insert(id, v);
        v
    }

    fn push_raw(&mut self, value: Value<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let needs = op.parents().iter().any(|&p| self.nodes[p.0].needs_grad);
        self.push_raw(Value::Owned(value), op, needs)
    }

    /// Gradients of a scalar `loss` with respect to every trainable parameter.
    pub fn backward(&self, loss: Var) -> Result<GradientMap<T>> {
        Ok(self.backward_full(loss)?.params)
    }

    /// Gradients with respect to every node on a path to a trainable parameter.
    ///
    /// The graph is not consumed; calling this twice yields identical results.
    pub fn backward_full(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(shape.to_vec(), vec![T::one()]));
        let mut params = GradientMap::new();

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let Some(g) = rest[0].as_ref() else { continue };
            match &self.nodes[i].op {
                Op::Param(id) => params.accumulate(*id, g.clone()),
                op => {
                    let mut sink = GradSink {
                        graph: self,
                        grads: before,
                    };
                    crate::ops::backprop(&mut sink, Var(i), op, g);
                }
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }
}

/// Writes parent gradients during the backward sweep.
pub(crate) struct GradSink<'a, 's, T> {
    pub(crate) graph: &'a Graph<'s, T>,
    grads: &'a mut [Option<Tensor<T>>],
}

impl<T: Scalar> GradSink<'_, '_, T> {
    /// Mutable gradient buffer for `v`, or `None` when `v` needs no gradient.
    pub(crate) fn slot(&mut self, v: Var) -> Option<&mut Tensor<T>> {
        if !self.graph.needs_grad(v) {
            return None;
        }
        let shape = self.graph.shape(v);
        Some(self.grads[v.0].get_or_insert_with(|| Tensor::zeros(shape.to_vec())))
    }
}

/// Result of a full backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: GradientMap<T>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to an intermediate node, if it was reached.
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> &GradientMap<T> {
        &self.params
    }

    pub fn into_params(self) -> GradientMap<T> {
        self.params
    }
}
