//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends one node holding its output value and enough of
//! its inputs to run the vector-Jacobian product later. Node ids are
//! assigned in push order, so the tape is topologically sorted by
//! construction and the backward sweep is a single reverse pass.

use crate::error::{Error, Result};
use crate::ops;
use crate::params::ParameterSet;
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T: Real> {
    Leaf { param: Option<String> },
    MatMul(Var, Var),
    Relu(Var),
    Conv2d { x: Var, k: Var, stride: usize },
    AvgPool { x: Var, window: usize },
    Reshape(Var),
    L2Normalize(Var),
    Dot(Var, Var),
    Sum(Var),
    WeightedSum { x: Var, weights: Tensor<T> },
    Scale(Var, T),
    /// Scalar-valued composite whose input gradients were computed during
    /// the forward pass.
    Fused {
        name: &'static str,
        inputs: Vec<Var>,
        grads: Vec<Tensor<T>>,
    },
}

impl<T: Real> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Relu(_) => "relu",
            Op::Conv2d { .. } => "conv2d",
            Op::AvgPool { .. } => "avgpool2d",
            Op::Reshape(_) => "reshape",
            Op::L2Normalize(_) => "l2_normalize",
            Op::Dot(..) => "dot",
            Op::Sum(_) => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Scale(..) => "scale",
            Op::Fused { name, .. } => name,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::MatMul(a, b) | Op::Dot(a, b) => vec![*a, *b],
            Op::Conv2d { x, k, .. } => vec![*x, *k],
            Op::Relu(x)
            | Op::AvgPool { x, .. }
            | Op::Reshape(x)
            | Op::L2Normalize(x)
            | Op::Sum(x)
            | Op::WeightedSum { x, .. }
            | Op::Scale(x, _) => vec![*x],
            Op::Fused { inputs, .. } => inputs.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded computation. Build it with the op methods, then call
/// [`Tape::backward`] on a scalar node.
#[derive(Clone, Debug, Default)]
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients from one backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        debug_assert!(op.inputs().iter().all(|i| i.0 < self.nodes.len()));
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; gradients are computed for it but not stored anywhere.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(value, Op::Leaf { param: None })
    }

    /// Leaf bound to a named parameter of `params`.
    pub fn param(&mut self, params: &ParameterSet<T>, name: &str) -> Result<Var> {
        let value = params.value(name)?.clone();
        self.push(
            value,
            Op::Leaf {
                param: Some(name.to_string()),
            },
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        self.push(v, Op::MatMul(a, b))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = ops::relu(self.value(x));
        self.push(v, Op::Relu(x))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let v = ops::conv2d(self.value(x), self.value(k), stride)?;
        self.push(v, Op::Conv2d { x, k, stride })
    }

    pub fn avgpool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        let v = ops::avgpool2d(self.value(x), window)?;
        self.push(v, Op::AvgPool { x, window })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        self.push(v, Op::Reshape(x))
    }

    /// Normalizes a vector or each row of a matrix.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let v = ops::l2_normalize(self.value(x))?;
        self.push(v, Op::L2Normalize(x))
    }

    /// Scalar inner product of two equal-shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape {
                op: "dot",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let v = Tensor::scalar(ops::dot(ta.data(), tb.data()));
        self.push(v, Op::Dot(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    /// `sum(x * weights)` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<T>) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape() != weights.shape() {
            return Err(Error::Shape {
                op: "weighted_sum",
                lhs: tx.shape().to_vec(),
                rhs: weights.shape().to_vec(),
            });
        }
        let v = Tensor::scalar(ops::dot(tx.data(), weights.data()));
        self.push(v, Op::WeightedSum { x, weights })
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let v = self.value(x).map(|e| e * c);
        self.push(v, Op::Scale(x, c))
    }

    /// Records a scalar function of `inputs`. `f` returns the value and the
    /// gradient with respect to each input.
    pub fn fused_scalar<F>(&mut self, name: &'static str, inputs: &[Var], f: F) -> Result<Var>
    where
        F: FnOnce(&[&Tensor<T>]) -> Result<(T, Vec<Tensor<T>>)>,
    {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let (value, grads) = f(&values)?;
        if grads.len() != inputs.len()
            || grads.iter().zip(&values).any(|(g, v)| g.shape() != v.shape())
        {
            return Err(Error::InvalidShape {
                op: name,
                reason: "fused gradient shapes do not match inputs".into(),
            });
        }
        self.push(
            Tensor::scalar(value),
            Op::Fused {
                name,
                inputs: inputs.to_vec(),
                grads,
            },
        )
    }

    /// Sign of every ReLU input entry, in recording order. Two evaluations
    /// of the same graph with equal signatures lie on the same linear piece.
    pub fn relu_signature(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => Some(self.value(x)),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    /// Runs the reverse sweep from `loss` and returns every node's gradient.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(g) = grads[id].as_ref() else { continue };
            let contributions = self.vjp(&node.op, g)?;
            for (input, contrib) in contributions {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Back-propagates `loss` and adds the result into the gradient
    /// accumulators of every parameter leaf reachable from it.
    pub fn backward(&self, loss: Var, params: &mut ParameterSet<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (id, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let Op::Leaf { param: Some(name) } = &node.op {
                if let Some(g) = &grads.grads[id] {
                    params.accumulate_grad(name, g)?;
                }
            }
        }
        Ok(())
    }

    fn vjp(&self, op: &Op<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        Ok(match op {
            Op::Leaf { .. } => vec![],
            Op::MatMul(a, b) => {
                let (da, db) = ops::matmul_backward(self.value(*a), self.value(*b), g)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Relu(x) => vec![(*x, ops::relu_backward(self.value(*x), g)?)],
            Op::Conv2d { x, k, stride } => {
                let (dx, dk) = ops::conv2d_backward(self.value(*x), self.value(*k), *stride, g)?;
                vec![(*x, dx), (*k, dk)]
            }
            Op::AvgPool { x, window } => {
                vec![(*x, ops::avgpool2d_backward(self.value(*x), *window, g)?)]
            }
            Op::Reshape(x) => vec![(*x, g.reshape(self.value(*x).shape())?)],
            Op::L2Normalize(x) => vec![(*x, ops::l2_normalize_backward(self.value(*x), g)?)],
            Op::Dot(a, b) => {
                let s = g.data()[0];
                vec![
                    (*a, self.value(*b).map(|v| v * s)),
                    (*b, self.value(*a).map(|v| v * s)),
                ]
            }
            Op::Sum(x) => {
                let s = g.data()[0];
                vec![(*x, Tensor::full(self.value(*x).shape(), s))]
            }
            Op::WeightedSum { x, weights } => {
                let s = g.data()[0];
                vec![(*x, weights.map(|w| w * s))]
            }
            Op::Scale(x, c) => vec![(*x, g.map(|v| v * *c))],
            Op::Fused { inputs, grads, .. } => {
                let s = g.data()[0];
                inputs
                    .iter()
                    .zip(grads)
                    .map(|(&v, gi)| (v, gi.map(|e| e * s)))
                    .collect()
            }
        })
    }
}
