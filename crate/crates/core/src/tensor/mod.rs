//! A small reverse-mode autograd engine over f64 tensors.
//!
//! Backward rules are written in terms of tracked tensor ops, so gradients
//! computed with `create_graph = true` can themselves be differentiated. The
//! R1 penalty relies on this.

pub(crate) mod kernels;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

pub use kernels::{sigmoid, softplus};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<usize> = const { Cell::new(0) };
}

fn next_id() -> usize {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

fn with_grad_mode<T>(enabled: bool, f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|c| c.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|c| c.replace(enabled)));
    f()
}

/// Runs `f` without recording any graph.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    with_grad_mode(false, f)
}

#[derive(Debug, Clone)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar,
    Exp,
    Log,
    Softplus,
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    Powf(f64),
    SumTo,
    Expand,
    Reshape,
    MatMul { ta: bool, tb: bool },
    Conv,
    ConvInputGrad,
    ConvWeightGrad,
    Upsample2x,
    SumPool2x,
    Narrow { axis: usize, start: usize },
    Embed { axis: usize, start: usize },
}

struct GradFn {
    op: Op,
    inputs: Vec<Tensor>,
}

struct Node {
    id: usize,
    data: Vec<f64>,
    shape: Vec<usize>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// Reference-counted tensor node. Cloning is cheap and shares the buffer.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn make(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        debug_assert_eq!(data.len(), kernels::numel(&shape));
        Tensor(Rc::new(Node { id: next_id(), data, shape, requires_grad, grad_fn }))
    }

    fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op, inputs: Vec<Tensor>) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let grad_fn = track.then_some(GradFn { op, inputs });
        Self::make(data, shape, track, grad_fn)
    }

    /// Untracked constant.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Self {
        assert_eq!(data.len(), kernels::numel(shape), "data length does not match shape {shape:?}");
        Self::make(data, shape.to_vec(), false, None)
    }

    /// Leaf that gradients are computed for.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Self {
        assert_eq!(data.len(), kernels::numel(shape), "data length does not match shape {shape:?}");
        Self::make(data, shape.to_vec(), true, None)
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(vec![v], &[])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Self::new(vec![v; kernels::numel(shape)], shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Self::new(self.0.data.clone(), &self.0.shape)
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Self::from_op(data, self.shape().to_vec(), op, vec![self.clone()])
    }

    fn zip(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (data, shape) = kernels::binary(self.data(), self.shape(), other.data(), other.shape(), f);
        Self::from_op(data, shape, op, vec![self.clone(), other.clone()])
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.zip(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Tensor {
        self.zip(other, Op::Div, |a, b| a / b)
    }

    pub fn neg(&self) -> Tensor {
        self.map(Op::Neg, |v| -v)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(Op::Scale(c), |v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(Op::AddScalar, |v| v + c)
    }

    pub fn exp(&self) -> Tensor {
        self.map(Op::Exp, f64::exp)
    }

    pub fn log(&self) -> Tensor {
        self.map(Op::Log, f64::ln)
    }

    pub fn softplus(&self) -> Tensor {
        self.map(Op::Softplus, kernels::softplus)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(Op::Sigmoid, kernels::sigmoid)
    }

    pub fn tanh(&self) -> Tensor {
        self.map(Op::Tanh, f64::tanh)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.map(Op::LeakyRelu(slope), |v| if v > 0.0 { v } else { v * slope })
    }

    pub fn powf(&self, p: f64) -> Tensor {
        self.map(Op::Powf(p), |v| v.powf(p))
    }

    pub fn square(&self) -> Tensor {
        self.mul(self)
    }

    /// Sums down to `target`, which must broadcast back to this tensor's shape.
    pub fn sum_to(&self, target: &[usize]) -> Tensor {
        if self.shape() == target {
            return self.clone();
        }
        let data = kernels::sum_to(self.data(), self.shape(), target);
        Self::from_op(data, target.to_vec(), Op::SumTo, vec![self.clone()])
    }

    pub fn expand(&self, target: &[usize]) -> Tensor {
        if self.shape() == target {
            return self.clone();
        }
        let data = kernels::expand(self.data(), self.shape(), target);
        Self::from_op(data, target.to_vec(), Op::Expand, vec![self.clone()])
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(kernels::numel(shape), self.numel(), "cannot reshape {:?} to {shape:?}", self.shape());
        if self.shape() == shape {
            return self.clone();
        }
        Self::from_op(self.to_vec(), shape.to_vec(), Op::Reshape, vec![self.clone()])
    }

    pub fn sum(&self) -> Tensor {
        self.sum_to(&[]).reshape(&[])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums over `axes`, keeping them as length-1 dimensions.
    pub fn sum_keepdim(&self, axes: &[usize]) -> Tensor {
        let mut target = self.shape().to_vec();
        for &a in axes {
            target[a] = 1;
        }
        self.sum_to(&target)
    }

    pub fn mean_keepdim(&self, axes: &[usize]) -> Tensor {
        let n: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_keepdim(axes).scale(1.0 / n as f64)
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        self.matmul_t(other, false, false)
    }

    /// `op(self) @ op(other)` where `op` transposes when the flag is set.
    pub fn matmul_t(&self, other: &Tensor, ta: bool, tb: bool) -> Tensor {
        assert!(self.shape().len() == 2 && other.shape().len() == 2, "matmul needs 2-D operands");
        let (m, k) = if ta { (self.dim(1), self.dim(0)) } else { (self.dim(0), self.dim(1)) };
        let (k2, n) = if tb { (other.dim(1), other.dim(0)) } else { (other.dim(0), other.dim(1)) };
        assert_eq!(k, k2, "matmul inner dims {:?} x {:?} (ta={ta}, tb={tb})", self.shape(), other.shape());
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, self.data(), ta, other.data(), tb, 0.0, &mut out);
        Self::from_op(out, vec![m, n], Op::MatMul { ta, tb }, vec![self.clone(), other.clone()])
    }

    /// Same-padded, stride-1 2-D convolution with an odd square kernel `[o, c, k, k]`.
    pub fn conv2d(&self, weight: &Tensor) -> Tensor {
        assert_eq!(self.shape().len(), 4, "conv2d input must be [n, c, h, w]");
        assert_eq!(weight.shape().len(), 4, "conv2d weight must be [o, c, k, k]");
        assert!(weight.dim(2) == weight.dim(3) && weight.dim(2) % 2 == 1, "conv2d kernel must be odd and square");
        let data = kernels::conv2d(self.data(), self.shape(), weight.data(), weight.shape());
        let s = self.shape();
        Self::from_op(data, vec![s[0], weight.dim(0), s[2], s[3]], Op::Conv, vec![self.clone(), weight.clone()])
    }

    fn conv2d_input_grad(&self, weight: &Tensor) -> Tensor {
        let data = kernels::conv2d_input_grad(self.data(), self.shape(), weight.data(), weight.shape());
        let s = self.shape();
        Self::from_op(data, vec![s[0], weight.dim(1), s[2], s[3]], Op::ConvInputGrad, vec![self.clone(), weight.clone()])
    }

    fn conv2d_weight_grad(input: &Tensor, grad: &Tensor, k: usize) -> Tensor {
        let data = kernels::conv2d_weight_grad(input.data(), input.shape(), grad.data(), grad.shape(), k);
        Self::from_op(
            data,
            vec![grad.dim(1), input.dim(1), k, k],
            Op::ConvWeightGrad,
            vec![input.clone(), grad.clone()],
        )
    }

    /// Nearest-neighbour 2x upsampling of the last two axes.
    pub fn upsample2x(&self) -> Tensor {
        let mut shape = self.shape().to_vec();
        let r = shape.len();
        shape[r - 2] *= 2;
        shape[r - 1] *= 2;
        Self::from_op(kernels::upsample2x(self.data(), self.shape()), shape, Op::Upsample2x, vec![self.clone()])
    }

    pub fn sum_pool2x(&self) -> Tensor {
        let mut shape = self.shape().to_vec();
        let r = shape.len();
        assert!(shape[r - 2] % 2 == 0 && shape[r - 1] % 2 == 0, "sum_pool2x needs even spatial dims");
        shape[r - 2] /= 2;
        shape[r - 1] /= 2;
        Self::from_op(kernels::sum_pool2x(self.data(), self.shape()), shape, Op::SumPool2x, vec![self.clone()])
    }

    pub fn avg_pool2x(&self) -> Tensor {
        self.sum_pool2x().scale(0.25)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        assert!(start + len <= self.dim(axis), "narrow out of range on axis {axis} of {:?}", self.shape());
        if start == 0 && len == self.dim(axis) {
            return self.clone();
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let data = kernels::narrow(self.data(), self.shape(), axis, start, len);
        Self::from_op(data, shape, Op::Narrow { axis, start }, vec![self.clone()])
    }

    /// Zero tensor of axis length `full` with `self` placed at `start`.
    fn embed(&self, axis: usize, start: usize, full: usize) -> Tensor {
        if start == 0 && full == self.dim(axis) {
            return self.clone();
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = full;
        let data = kernels::embed(self.data(), self.shape(), axis, start, full);
        Self::from_op(data, shape, Op::Embed { axis, start }, vec![self.clone()])
    }

    pub fn cat(parts: &[Tensor], axis: usize) -> Tensor {
        assert!(!parts.is_empty(), "cat of nothing");
        let full: usize = parts.iter().map(|t| t.dim(axis)).sum();
        let mut start = 0;
        let mut acc: Option<Tensor> = None;
        for p in parts {
            let e = p.embed(axis, start, full);
            start += p.dim(axis);
            acc = Some(match acc {
                None => e,
                Some(a) => a.add(&e),
            });
        }
        acc.unwrap()
    }

    fn backward_op(&self, op: &Op, inputs: &[Tensor], g: &Tensor, needed: &HashSet<usize>) -> Vec<Option<Tensor>> {
        let a = &inputs[0];
        let want = |t: &Tensor| needed.contains(&t.0.id);
        match op {
            Op::Add => vec![Some(g.sum_to(a.shape())), Some(g.sum_to(inputs[1].shape()))],
            Op::Sub => vec![Some(g.sum_to(a.shape())), Some(g.sum_to(inputs[1].shape()).neg())],
            Op::Mul => {
                let b = &inputs[1];
                vec![
                    want(a).then(|| g.mul(b).sum_to(a.shape())),
                    want(b).then(|| g.mul(a).sum_to(b.shape())),
                ]
            }
            Op::Div => {
                let b = &inputs[1];
                vec![
                    want(a).then(|| g.div(b).sum_to(a.shape())),
                    want(b).then(|| g.mul(self).div(b).neg().sum_to(b.shape())),
                ]
            }
            Op::Neg => vec![Some(g.neg())],
            Op::Scale(c) => vec![Some(g.scale(*c))],
            Op::AddScalar => vec![Some(g.clone())],
            Op::Exp => vec![Some(g.mul(self))],
            Op::Log => vec![Some(g.div(a))],
            Op::Softplus => vec![Some(g.mul(&a.sigmoid()))],
            Op::Sigmoid => vec![Some(g.mul(&self.mul(&self.neg().add_scalar(1.0))))],
            Op::Tanh => vec![Some(g.mul(&self.square().neg().add_scalar(1.0)))],
            Op::LeakyRelu(slope) => {
                let mask: Vec<f64> = a.data().iter().map(|&v| if v > 0.0 { 1.0 } else { *slope }).collect();
                vec![Some(g.mul(&Tensor::new(mask, a.shape())))]
            }
            Op::Powf(p) => vec![Some(g.mul(&a.powf(p - 1.0)).scale(*p))],
            Op::SumTo => vec![Some(g.expand(a.shape()))],
            Op::Expand => vec![Some(g.sum_to(a.shape()))],
            Op::Reshape => vec![Some(g.reshape(a.shape()))],
            Op::MatMul { ta, tb } => {
                let b = &inputs[1];
                let ga = want(a).then(|| match (ta, tb) {
                    (false, false) => g.matmul_t(b, false, true),
                    (false, true) => g.matmul_t(b, false, false),
                    (true, false) => b.matmul_t(g, false, true),
                    (true, true) => b.matmul_t(g, true, true),
                });
                let gb = want(b).then(|| match (ta, tb) {
                    (false, false) => a.matmul_t(g, true, false),
                    (false, true) => g.matmul_t(a, true, false),
                    (true, false) => a.matmul_t(g, false, false),
                    (true, true) => g.matmul_t(a, true, true),
                });
                vec![ga, gb]
            }
            Op::Conv => {
                let w = &inputs[1];
                vec![
                    want(a).then(|| g.conv2d_input_grad(w)),
                    want(w).then(|| Tensor::conv2d_weight_grad(a, g, w.dim(2))),
                ]
            }
            Op::ConvInputGrad => {
                // self = input_grad(a, w)
                let w = &inputs[1];
                vec![
                    want(a).then(|| g.conv2d(w)),
                    want(w).then(|| Tensor::conv2d_weight_grad(g, a, w.dim(2))),
                ]
            }
            Op::ConvWeightGrad => {
                // self = weight_grad(x, gy)
                let gy = &inputs[1];
                vec![
                    want(a).then(|| gy.conv2d_input_grad(g)),
                    want(gy).then(|| a.conv2d(g)),
                ]
            }
            Op::Upsample2x => vec![Some(g.sum_pool2x())],
            Op::SumPool2x => vec![Some(g.upsample2x())],
            Op::Narrow { axis, start } => vec![Some(g.embed(*axis, *start, a.dim(*axis)))],
            Op::Embed { axis, start } => vec![Some(g.narrow(*axis, *start, a.dim(*axis)))],
        }
    }
}

/// Gradients of the scalar `output` with respect to each tensor in `wrt`.
///
/// Tensors that `output` does not depend on get a zero gradient. With
/// `create_graph` the returned gradients are tracked and can be differentiated
/// again.
pub fn grad(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Vec<Tensor> {
    assert_eq!(output.numel(), 1, "grad() needs a scalar output, got {:?}", output.shape());
    let mut grads: HashMap<usize, Tensor> = HashMap::new();
    if output.requires_grad() {
        let order = topo_order(output);
        let keep: HashSet<usize> = wrt.iter().map(|t| t.0.id).collect();
        // nodes with a path to some requested tensor; children precede parents in `order`
        let mut needed = keep.clone();
        for node in &order {
            if let Some(gf) = &node.0.grad_fn {
                if gf.inputs.iter().any(|i| needed.contains(&i.0.id)) {
                    needed.insert(node.0.id);
                }
            }
        }
        with_grad_mode(create_graph, || {
            grads.insert(output.0.id, Tensor::ones(output.shape()));
            for node in order.iter().rev() {
                let Some(gf) = &node.0.grad_fn else { continue };
                let g = if keep.contains(&node.0.id) {
                    grads.get(&node.0.id).cloned()
                } else {
                    grads.remove(&node.0.id)
                };
                let Some(g) = g else { continue };
                let parts = node.backward_op(&gf.op, &gf.inputs, &g, &needed);
                for (input, part) in gf.inputs.iter().zip(parts) {
                    let Some(part) = part else { continue };
                    if !needed.contains(&input.0.id) {
                        continue;
                    }
                    let id = input.0.id;
                    let merged = match grads.remove(&id) {
                        Some(prev) => prev.add(&part),
                        None => part,
                    };
                    grads.insert(id, merged);
                }
            }
        });
    }
    wrt.iter()
        .map(|t| {
            grads
                .get(&t.0.id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect()
}

fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // (node, children expanded?)
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.0.id) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(gf) = &t.0.grad_fn {
            for input in &gf.inputs {
                if input.requires_grad() && !seen.contains(&input.0.id) {
                    stack.push((input.clone(), false));
                }
            }
        }
    }
    order
}
