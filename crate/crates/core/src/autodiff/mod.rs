//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] owns every node produced during a forward pass. Nodes are
//! appended after their inputs, so the node vector is already a topological
//! order and [`Tape::backward`] only has to walk it in reverse. Handles into
//! the tape are plain indices ([`Var`]); a tape is single-threaded but can be
//! moved between threads whole.

mod conv;
mod elementwise;
mod linear;
mod pool;
mod shape;

pub use conv::{conv1d_values, conv2d_values, Conv2dOptions};
pub(crate) use elementwise::sigmoid as sigmoid_value;
pub use elementwise::{broadcast_shape, ElementwiseOp};
pub use pool::PoolKind;

use crate::error::{Error, Result};
use crate::neuron::{self, LifConfig, Surrogate};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<F> {
    Leaf,
    Add {
        a: Var,
        b: Var,
        map_a: Option<Vec<usize>>,
        map_b: Option<Vec<usize>>,
    },
    Sub {
        a: Var,
        b: Var,
        map_a: Option<Vec<usize>>,
        map_b: Option<Vec<usize>>,
    },
    Mul {
        a: Var,
        b: Var,
        map_a: Option<Vec<usize>>,
        map_b: Option<Vec<usize>>,
    },
    Affine {
        x: Var,
        scale: F,
    },
    Sigmoid {
        x: Var,
    },
    Heaviside {
        x: Var,
        surrogate: Surrogate,
        offset: f64,
    },
    Sum {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Index {
        x: Var,
        offset: usize,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    BlockMean {
        x: Var,
        block: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        geom: conv::Conv2dGeom,
    },
    Conv1d {
        input: Var,
        kernel: Var,
        geom: conv::Conv1dGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        geom: pool::PoolGeom,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Lif {
        input: Var,
        steps: usize,
        v: Vec<F>,
        s: Vec<F>,
        cfg: LifConfig,
    },
}

impl<F> Op<F> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add { a, b, .. } | Op::Sub { a, b, .. } | Op::Mul { a, b, .. } => vec![*a, *b],
            Op::Affine { x, .. }
            | Op::Sigmoid { x }
            | Op::Heaviside { x, .. }
            | Op::Sum { x }
            | Op::Reshape { x }
            | Op::Index { x, .. }
            | Op::Permute { x, .. }
            | Op::BlockMean { x, .. }
            | Op::MaxPool { x, .. }
            | Op::AvgPool { x, .. } => vec![*x],
            Op::Conv2d { input, kernel, .. } | Op::Conv1d { input, kernel, .. } => {
                vec![*input, *kernel]
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => vec![*input, *weight, *bias],
            Op::Lif { input, .. } => vec![*input],
        }
    }
}

pub(crate) struct Node<F> {
    pub(crate) value: Tensor<F>,
    pub(crate) op: Op<F>,
    pub(crate) requires_grad: bool,
}

/// Recording of one forward pass.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node and gradient.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    /// Adds a leaf. Trainable parameters pass `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `x` with no gradient path back to it.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.constant(value)
    }

    pub(crate) fn push(&mut self, value: Tensor<F>, op: Op<F>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn node(&self, v: Var) -> &Node<F> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to `v`.
    ///
    /// `None` when `v` does not require a gradient or lies off the loss path.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<F>> {
        self.grad(v)
            .map(|g| Tensor::new(self.shape(v).to_vec(), g.to_vec()).expect("grad shape"))
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate additively
    /// over fan-out; previous gradients on this tape are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.shape(loss);
        if loss_shape.iter().product::<usize>() != 1 || self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NotScalar(loss_shape.to_vec()));
        }
        let Tape { nodes, grads } = self;
        grads.clear();
        grads.resize_with(nodes.len(), || None);
        if !nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(gout) = upper[0].as_deref() else {
                continue;
            };
            backward_node(&nodes[i], nodes, gout, lower);
        }
        Ok(())
    }
}

/// Gradient buffer for `v`, allocated on first use; `None` if `v` is not
/// differentiable.
fn slot<'a, F: Scalar>(
    grads: &'a mut [Option<Vec<F>>],
    nodes: &[Node<F>],
    v: Var,
) -> Option<&'a mut Vec<F>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); node.value.numel()]))
}

fn scatter<F: Scalar>(dst: &mut [F], map: &Option<Vec<usize>>, src: impl Iterator<Item = F>) {
    match map {
        None => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
        Some(m) => m.iter().zip(src).for_each(|(&i, s)| dst[i] += s),
    }
}

#[inline]
fn at<F: Copy>(values: &[F], map: &Option<Vec<usize>>, k: usize) -> F {
    match map {
        None => values[k],
        Some(m) => values[m[k]],
    }
}

fn backward_node<F: Scalar>(
    node: &Node<F>,
    nodes: &[Node<F>],
    g: &[F],
    grads: &mut [Option<Vec<F>>],
) {
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add { a, b, map_a, map_b } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                scatter(ga, map_a, g.iter().copied());
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                scatter(gb, map_b, g.iter().copied());
            }
        }
        Op::Sub { a, b, map_a, map_b } => {
            if let Some(ga) = slot(grads, nodes, *a) {
                scatter(ga, map_a, g.iter().copied());
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                scatter(gb, map_b, g.iter().map(|&x| -x));
            }
        }
        Op::Mul { a, b, map_a, map_b } => {
            let (av, bv) = (val(*a), val(*b));
            if let Some(ga) = slot(grads, nodes, *a) {
                let src = g.iter().enumerate().map(|(k, &gk)| gk * at(bv, map_b, k));
                scatter(ga, map_a, src);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                let src = g.iter().enumerate().map(|(k, &gk)| gk * at(av, map_a, k));
                scatter(gb, map_b, src);
            }
        }
        Op::Affine { x, scale } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s * *scale);
            }
        }
        Op::Sigmoid { x } => {
            let y = node.value.data();
            if let Some(gx) = slot(grads, nodes, *x) {
                for ((d, &s), &yk) in gx.iter_mut().zip(g).zip(y) {
                    *d += s * yk * (F::one() - yk);
                }
            }
        }
        Op::Heaviside {
            x,
            surrogate,
            offset,
        } => {
            let xv = val(*x);
            let off = F::lit(*offset);
            if let Some(gx) = slot(grads, nodes, *x) {
                for ((d, &s), &xk) in gx.iter_mut().zip(g).zip(xv) {
                    *d += s * surrogate.derivative(xk + off);
                }
            }
        }
        Op::Sum { x } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                let s = g[0];
                gx.iter_mut().for_each(|d| *d += s);
            }
        }
        Op::Reshape { x } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s);
            }
        }
        Op::Index { x, offset } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                gx[*offset..*offset + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, &s)| *d += s);
            }
        }
        Op::Permute { x, perm } => {
            let in_shape = nodes[x.0].value.shape();
            if let Some(gx) = slot(grads, nodes, *x) {
                shape::permute_backward(g, in_shape, perm, gx);
            }
        }
        Op::BlockMean { x, block } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                shape::block_mean_backward(g, *block, gx);
            }
        }
        Op::Conv2d {
            input,
            kernel,
            geom,
        } => {
            let (xv, kv) = (val(*input), val(*kernel));
            if let Some(gx) = slot(grads, nodes, *input) {
                conv::conv2d_backward_input(g, kv, geom, gx);
            }
            if let Some(gk) = slot(grads, nodes, *kernel) {
                conv::conv2d_backward_kernel(g, xv, geom, gk);
            }
        }
        Op::Conv1d {
            input,
            kernel,
            geom,
        } => {
            let (xv, kv) = (val(*input), val(*kernel));
            if let Some(gx) = slot(grads, nodes, *input) {
                conv::conv1d_backward_input(g, kv, geom, gx);
            }
            if let Some(gk) = slot(grads, nodes, *kernel) {
                conv::conv1d_backward_kernel(g, xv, geom, gk);
            }
        }
        Op::MaxPool { x, argmax } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                for (&i, &s) in argmax.iter().zip(g) {
                    gx[i] += s;
                }
            }
        }
        Op::AvgPool { x, geom } => {
            if let Some(gx) = slot(grads, nodes, *x) {
                pool::avg_pool_backward(g, geom, gx);
            }
        }
        Op::Linear {
            input,
            weight,
            bias,
        } => {
            let (xv, wv) = (val(*input), val(*weight));
            let (rows, fin) = (
                nodes[input.0].value.shape()[0],
                nodes[input.0].value.shape()[1],
            );
            let fout = nodes[weight.0].value.shape()[1];
            let dims = linear::Dims { rows, fin, fout };
            if let Some(gx) = slot(grads, nodes, *input) {
                linear::backward_input(g, wv, dims, gx);
            }
            if let Some(gw) = slot(grads, nodes, *weight) {
                linear::backward_weight(g, xv, dims, gw);
            }
            if let Some(gb) = slot(grads, nodes, *bias) {
                linear::backward_bias(g, dims, gb);
            }
        }
        Op::Lif {
            input,
            steps,
            v,
            s,
            cfg,
        } => {
            if let Some(gx) = slot(grads, nodes, *input) {
                neuron::lif_backward(g, v, s, *steps, cfg, gx);
            }
        }
    }
}
