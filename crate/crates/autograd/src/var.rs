//! Reverse-mode automatic differentiation.
//!
//! Every operation on a [`Var`] produces a new node holding its value and, when
//! any input is tracked, a record of how to push gradients back to its inputs.
//! Untracked nodes keep no references to their inputs, so evaluation without
//! gradients frees intermediates as soon as they go out of scope.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::kernels::{self, conv, linalg, norm, resize};
use crate::{Result, Scalar, Tensor, TensorError};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Backward rule for an operation defined outside this crate.
pub trait CustomOp<T: Scalar> {
    fn name(&self) -> &'static str;

    /// Returns one optional gradient per input, in input order.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>;
}

enum Op<T: Scalar> {
    Leaf,
    Conv2d { x: Var<T>, w: Var<T>, b: Option<Var<T>>, stride: usize, pad: usize },
    BatchNorm { x: Var<T>, gamma: Var<T>, beta: Var<T>, mean: Vec<T>, invstd: Vec<T>, batch_stats: bool },
    Relu(Var<T>),
    Sigmoid(Var<T>),
    Add(Var<T>, Var<T>),
    Scale(Var<T>, T),
    MulScalar { x: Var<T>, s: Var<T> },
    MulChannel { x: Var<T>, m: Var<T> },
    Resize { x: Var<T> },
    MatMul { a: Var<T>, b: Var<T>, ta: bool, tb: bool },
    Softmax(Var<T>),
    Linear { x: Var<T>, w: Var<T>, b: Option<Var<T>> },
    AvgPool(Var<T>),
    Bce { pred: Var<T>, target: Tensor<T>, eps: T },
    Custom { inputs: Vec<Var<T>>, op: Box<dyn CustomOp<T>> },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::MulScalar { .. } => "mul_scalar",
            Op::MulChannel { .. } => "mul_channel",
            Op::Resize { .. } => "resize",
            Op::MatMul { .. } => "matmul",
            Op::Softmax(_) => "softmax",
            Op::Linear { .. } => "linear",
            Op::AvgPool(_) => "avg_pool",
            Op::Bce { .. } => "bce",
            Op::Custom { op, .. } => op.name(),
        }
    }

    fn parents(&self) -> Vec<&Var<T>> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![x, w];
                v.extend(b.iter());
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Relu(x) | Op::Sigmoid(x) | Op::Scale(x, _) | Op::Softmax(x) | Op::AvgPool(x) => vec![x],
            Op::Add(a, b) => vec![a, b],
            Op::MulScalar { x, s } => vec![x, s],
            Op::MulChannel { x, m } => vec![x, m],
            Op::Resize { x } => vec![x],
            Op::MatMul { a, b, .. } => vec![a, b],
            Op::Linear { x, w, b } => {
                let mut v = vec![x, w];
                v.extend(b.iter());
                v
            }
            Op::Bce { pred, .. } => vec![pred],
            Op::Custom { inputs, .. } => inputs.iter().collect(),
        }
    }

    /// Gradient contributions to the parents, given the node output and its gradient.
    fn backward(&self, out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var<T>, Tensor<T>)>> {
        let mut res = Vec::new();
        let mut push = |v: &Var<T>, t: Tensor<T>| {
            if v.tracked() {
                res.push((v.clone(), t));
            }
        };
        match self {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, pad } => {
                let (gx, gw, gb) = conv::conv2d_backward(x.value(), w.value(), g, *stride, *pad, x.tracked())?;
                if let Some(gx) = gx {
                    push(x, gx);
                }
                push(w, gw);
                if let Some(b) = b {
                    push(b, gb);
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, invstd, batch_stats } => {
                let (gx, gg, gb) =
                    norm::normalize_backward(x.value(), gamma.value().data(), mean, invstd, g, *batch_stats)?;
                push(x, gx);
                push(gamma, Tensor::new(gamma.value().shape().to_vec(), gg)?);
                push(beta, Tensor::new(beta.value().shape().to_vec(), gb)?);
            }
            Op::Relu(x) => {
                push(x, x.value().zip_map(g, |xv, gv| if xv > T::zero() { gv } else { T::zero() })?);
            }
            Op::Sigmoid(x) => {
                push(x, out.zip_map(g, |y, gv| gv * y * (T::one() - y))?);
            }
            Op::Add(a, b) => {
                push(a, g.clone());
                push(b, g.clone());
            }
            Op::Scale(x, c) => {
                let c = *c;
                push(x, g.map(|v| v * c));
            }
            Op::MulScalar { x, s } => {
                let sv = s.value().data()[0];
                if x.tracked() {
                    push(x, g.map(|v| v * sv));
                }
                let ds: T = x.value().data().iter().zip(g.data()).map(|(&a, &b)| a * b).sum();
                push(s, Tensor::new(s.value().shape().to_vec(), vec![ds])?);
            }
            Op::MulChannel { x, m } => {
                if x.tracked() {
                    push(x, kernels::mul_channel_broadcast(g, m.value())?);
                }
                if m.tracked() {
                    let [n, c, h, w] = x.value().dims4()?;
                    let hw = h * w;
                    let mut gm = vec![T::zero(); n * hw];
                    for b in 0..n {
                        for ci in 0..c {
                            let off = (b * c + ci) * hw;
                            let xs = &x.value().data()[off..off + hw];
                            let gs = &g.data()[off..off + hw];
                            for ((o, &xv), &gv) in gm[b * hw..(b + 1) * hw].iter_mut().zip(xs).zip(gs) {
                                *o += xv * gv;
                            }
                        }
                    }
                    push(m, Tensor::new(vec![n, 1, h, w], gm)?);
                }
            }
            Op::Resize { x } => {
                let [_, _, h, w] = x.value().dims4()?;
                push(x, resize::bilinear_backward(g, h, w)?);
            }
            Op::MatMul { a, b, ta, tb } => {
                let (ga, gb) = linalg::matmul3_backward(a.value(), b.value(), *ta, *tb, g)?;
                push(a, ga);
                push(b, gb);
            }
            Op::Softmax(x) => push(x, linalg::softmax_last_backward(out, g)?),
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = linalg::linear_backward(x.value(), w.value(), g)?;
                push(x, gx);
                push(w, gw);
                if let Some(b) = b {
                    push(b, gb);
                }
            }
            Op::AvgPool(x) => {
                let [n, c, h, w] = x.value().dims4()?;
                let inv = T::one() / T::from_usize(h * w).expect("size");
                let mut gx = Vec::with_capacity(n * c * h * w);
                for &gv in g.data() {
                    gx.extend(std::iter::repeat_n(gv * inv, h * w));
                }
                push(x, Tensor::new(vec![n, c, h, w], gx)?);
            }
            Op::Bce { pred, target, eps } => {
                let scale = g.data()[0] / T::from_usize(pred.value().numel()).expect("size");
                let (lo, hi) = (*eps, T::one() - *eps);
                let gp = pred.value().zip_map(target, |p, t| {
                    if p < lo || p > hi {
                        T::zero()
                    } else {
                        scale * (p - t) / (p * (T::one() - p))
                    }
                })?;
                push(pred, gp);
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| v.value()).collect();
                let grads = op.backward(&vals, out, g)?;
                for (v, gv) in inputs.iter().zip(grads) {
                    if let Some(gv) = gv {
                        push(v, gv);
                    }
                }
            }
        }
        Ok(res)
    }
}

struct Node<T: Scalar> {
    id: u64,
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// A value in the computation graph.
#[derive(Clone)]
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("op", &self.0.op.name())
            .field("shape", &self.0.value.shape())
            .field("tracked", &self.0.tracked)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    /// A graph input. Gradients are collected for it when `requires_grad` is set.
    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node { id: next_id(), value, op: Op::Leaf, tracked: requires_grad }))
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    fn from_op(value: Tensor<T>, op: Op<T>) -> Self {
        let tracked = op.parents().iter().any(|p| p.tracked());
        let op = if tracked { op } else { Op::Leaf };
        Var(Rc::new(Node { id: next_id(), value, op, tracked }))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn tracked(&self) -> bool {
        self.0.tracked
    }

    /// Wraps an externally computed `output` with a custom backward rule.
    pub fn custom(inputs: &[&Var<T>], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Self {
        Self::from_op(output, Op::Custom { inputs: inputs.iter().map(|v| (*v).clone()).collect(), op })
    }

    pub fn conv2d(&self, w: &Var<T>, b: Option<&Var<T>>, stride: usize, pad: usize) -> Result<Self> {
        let y = conv::conv2d(self.value(), w.value(), b.map(|b| b.value()), stride, pad)?;
        Ok(Self::from_op(y, Op::Conv2d { x: self.clone(), w: w.clone(), b: b.cloned(), stride, pad }))
    }

    /// Batch normalization with explicit statistics. With `batch_stats` the
    /// statistics are treated as functions of `self` when differentiating.
    pub fn batch_norm(
        &self,
        gamma: &Var<T>,
        beta: &Var<T>,
        mean: Vec<T>,
        invstd: Vec<T>,
        batch_stats: bool,
    ) -> Result<Self> {
        let y = norm::normalize(self.value(), gamma.value().data(), beta.value().data(), &mean, &invstd)?;
        Ok(Self::from_op(
            y,
            Op::BatchNorm { x: self.clone(), gamma: gamma.clone(), beta: beta.clone(), mean, invstd, batch_stats },
        ))
    }

    pub fn relu(&self) -> Self {
        Self::from_op(kernels::relu(self.value()), Op::Relu(self.clone()))
    }

    pub fn sigmoid(&self) -> Self {
        Self::from_op(kernels::sigmoid(self.value()), Op::Sigmoid(self.clone()))
    }

    pub fn add(&self, other: &Var<T>) -> Result<Self> {
        let y = self.value().zip_map(other.value(), |a, b| a + b)?;
        Ok(Self::from_op(y, Op::Add(self.clone(), other.clone())))
    }

    pub fn scale(&self, c: T) -> Self {
        Self::from_op(self.value().map(|v| v * c), Op::Scale(self.clone(), c))
    }

    /// Multiplies by a single-element variable (a learnable scalar).
    pub fn mul_scalar(&self, s: &Var<T>) -> Result<Self> {
        if s.value().numel() != 1 {
            return Err(TensorError::Shape(format!("mul_scalar: expected one element, got {:?}", s.shape())));
        }
        let sv = s.value().data()[0];
        Ok(Self::from_op(self.value().map(|v| v * sv), Op::MulScalar { x: self.clone(), s: s.clone() }))
    }

    /// Multiplies an NCHW tensor by an N1HW mask broadcast over channels.
    pub fn mul_channel_broadcast(&self, m: &Var<T>) -> Result<Self> {
        let y = kernels::mul_channel_broadcast(self.value(), m.value())?;
        Ok(Self::from_op(y, Op::MulChannel { x: self.clone(), m: m.clone() }))
    }

    /// Bilinear resize (half-pixel centers) to `oh × ow`.
    pub fn resize_bilinear(&self, oh: usize, ow: usize) -> Result<Self> {
        let y = resize::bilinear(self.value(), oh, ow)?;
        Ok(Self::from_op(y, Op::Resize { x: self.clone() }))
    }

    pub fn matmul(&self, other: &Var<T>, ta: bool, tb: bool) -> Result<Self> {
        let y = linalg::matmul3(self.value(), other.value(), ta, tb)?;
        Ok(Self::from_op(y, Op::MatMul { a: self.clone(), b: other.clone(), ta, tb }))
    }

    pub fn softmax_last(&self) -> Result<Self> {
        let y = linalg::softmax_last(self.value())?;
        Ok(Self::from_op(y, Op::Softmax(self.clone())))
    }

    pub fn linear(&self, w: &Var<T>, b: Option<&Var<T>>) -> Result<Self> {
        let y = linalg::linear(self.value(), w.value(), b.map(|b| b.value()))?;
        Ok(Self::from_op(y, Op::Linear { x: self.clone(), w: w.clone(), b: b.cloned() }))
    }

    pub fn global_avg_pool(&self) -> Result<Self> {
        let y = kernels::global_avg_pool(self.value())?;
        Ok(Self::from_op(y, Op::AvgPool(self.clone())))
    }

    /// Mean binary cross-entropy against a constant target; returns a one-element variable.
    pub fn bce_mean(&self, target: &Tensor<T>, eps: T) -> Result<Self> {
        let v = kernels::bce_mean(self.value(), target, eps)?;
        Ok(Self::from_op(Tensor::scalar(v), Op::Bce { pred: self.clone(), target: target.clone(), eps }))
    }

    /// Back-propagates from this one-element variable.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.value().numel() != 1 {
            return Err(TensorError::Shape(format!("backward from non-scalar {:?}", self.shape())));
        }
        let mut nodes: Vec<Var<T>> = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !v.tracked() || !seen.insert(v.id()) {
                continue;
            }
            for p in v.0.op.parents() {
                stack.push(p.clone());
            }
            nodes.push(v);
        }
        nodes.sort_by_key(|v| std::cmp::Reverse(v.id()));

        let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
        pending.insert(self.id(), Tensor::full(self.shape().to_vec(), T::one()));
        let mut leaves = HashMap::new();
        for node in nodes {
            let Some(g) = pending.remove(&node.id()) else { continue };
            if matches!(node.0.op, Op::Leaf) {
                leaves.insert(node.id(), g);
                continue;
            }
            for (parent, pg) in node.0.op.backward(node.value(), &g)? {
                match pending.get_mut(&parent.id()) {
                    Some(acc) => acc.add_assign(&pg)?,
                    None => {
                        pending.insert(parent.id(), pg);
                    }
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Gradients of tracked leaves, keyed by node.
#[derive(Default)]
pub struct Gradients<T: Scalar> {
    grads: HashMap<u64, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: &Var<T>) -> Option<&Tensor<T>> {
        self.grads.get(&v.id())
    }

    pub fn take(&mut self, v: &Var<T>) -> Option<Tensor<T>> {
        self.grads.remove(&v.id())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(shape: &[usize], s: f64) -> Var<f64> {
        let n: usize = shape.iter().product();
        Var::leaf(Tensor::new(shape.to_vec(), (0..n).map(|i| ((i as f64 + 1.0) * s).sin()).collect()).unwrap(), true)
    }

    #[test]
    fn untracked_graph_drops_parents() {
        let x = Var::constant(Tensor::<f64>::ones(vec![2]));
        let y = x.relu().sigmoid();
        assert!(!y.tracked());
        assert!(matches!(y.0.op, Op::Leaf));
    }

    #[test]
    fn shared_input_accumulates() {
        let x = leaf(&[1, 3], 0.5);
        let w = Var::constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        // loss = sum(x*w) + sum(x*w) through two linear branches
        let a = x.linear(&w, None).unwrap();
        let b = x.linear(&w, None).unwrap();
        let loss = a.add(&b).unwrap();
        let g = loss.backward().unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }
}
