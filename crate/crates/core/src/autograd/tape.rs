//! Define-by-run reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node to the [`Tape`].
//! Inputs always precede outputs, so a single reverse sweep over the node
//! list visits each node exactly once in a valid order.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::autograd::{ParamId, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

pub(crate) enum Value<'p, T> {
    Owned(Tensor<T>),
    Borrowed(&'p Tensor<T>),
}

impl<T> Value<'_, T> {
    fn get(&self) -> &Tensor<T> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

/// Coarse operation category, used for graph introspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Input,
    Param,
    Add,
    Sub,
    Mul,
    AddBias,
    MulRow,
    Affine,
    MulConst,
    MatMul,
    Transpose,
    Tanh,
    Sigmoid,
    Relu,
    Concat,
    Reshape,
    Gather,
    SliceRows,
    Conv2d,
    MaxPool2d,
    GlobalMaxPool,
    MaskedMaxTime,
    MaskedSoftmax,
    AddOuter,
    Interaction,
    SoftmaxCrossEntropy,
    Sum,
    AddN,
}

pub(crate) enum Op<T> {
    Input,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    MulRow(Var, Var),
    Affine(Var, T),
    MulConst(Var, Vec<T>),
    MatMul(Var, Var),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Reshape(Var),
    Gather { table: Var, ids: Vec<usize> },
    SliceRows { x: Var, start: usize },
    Conv2d { x: Var, kernel: Var, bias: Option<Var> },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    GlobalMaxPool { x: Var, argmax: Vec<usize> },
    MaskedMaxTime { x: Var, argmax: Vec<Option<usize>> },
    MaskedSoftmax(Var),
    AddOuter { base: Var, rows: Var, cols: Var },
    Interaction(Var, Var),
    SoftmaxCrossEntropy { logits: Var, label: usize, probs: Vec<T> },
    Sum(Var),
    AddN(Vec<Var>),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Param => OpKind::Param,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddBias(..) => OpKind::AddBias,
            Op::MulRow(..) => OpKind::MulRow,
            Op::Affine(..) => OpKind::Affine,
            Op::MulConst(..) => OpKind::MulConst,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Relu(..) => OpKind::Relu,
            Op::Concat(..) => OpKind::Concat,
            Op::Reshape(..) => OpKind::Reshape,
            Op::Gather { .. } => OpKind::Gather,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::MaxPool2d { .. } => OpKind::MaxPool2d,
            Op::GlobalMaxPool { .. } => OpKind::GlobalMaxPool,
            Op::MaskedMaxTime { .. } => OpKind::MaskedMaxTime,
            Op::MaskedSoftmax(..) => OpKind::MaskedSoftmax,
            Op::AddOuter { .. } => OpKind::AddOuter,
            Op::Interaction(..) => OpKind::Interaction,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::Sum(..) => OpKind::Sum,
            Op::AddN(..) => OpKind::AddN,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b)
            | Op::MulRow(a, b)
            | Op::MatMul(a, b)
            | Op::Interaction(a, b) => vec![*a, *b],
            Op::Affine(x, _)
            | Op::MulConst(x, _)
            | Op::Transpose(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::Relu(x)
            | Op::Reshape(x)
            | Op::SliceRows { x, .. }
            | Op::MaxPool2d { x, .. }
            | Op::GlobalMaxPool { x, .. }
            | Op::MaskedMaxTime { x, .. }
            | Op::MaskedSoftmax(x)
            | Op::Sum(x) => vec![*x],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::Gather { table, .. } => vec![*table],
            Op::Concat(xs) | Op::AddN(xs) => xs.clone(),
            Op::Conv2d { x, kernel, bias } => {
                let mut v = vec![*x, *kernel];
                v.extend(bias);
                v
            }
            Op::AddOuter { base, rows, cols } => vec![*base, *rows, *cols],
        }
    }
}

pub(crate) struct Node<'p, T> {
    pub(crate) value: Value<'p, T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
    scope: u32,
    param: Option<ParamId>,
}

/// Read-only view of one recorded node.
#[derive(Clone, Debug)]
pub struct NodeInfo<'a> {
    pub index: usize,
    pub kind: OpKind,
    pub inputs: Vec<usize>,
    pub scope: &'a str,
    pub shape: &'a [usize],
    pub param: Option<ParamId>,
}

/// Test hook that perturbs a backward rule; used as a negative control for
/// gradient checking.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fault {
    ScaleReluGrad(f64),
    ScaleMatMulGrad(f64),
}

pub struct Tape<'p, T: Scalar> {
    id: u32,
    pub(crate) nodes: Vec<Node<'p, T>>,
    scopes: Vec<String>,
    scope_stack: Vec<u32>,
    fault: Option<Fault>,
}

impl<'p, T: Scalar> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            scopes: vec![String::new()],
            scope_stack: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: Fault) {
        self.fault = Some(fault);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Enter a named scope; nested scopes are joined with `/`.
    pub fn push_scope(&mut self, name: &str) {
        let parent = self.current_scope();
        let full = if parent.is_empty() {
            name.to_string()
        } else {
            format!("{parent}/{name}")
        };
        self.scopes.push(full);
        self.scope_stack.push((self.scopes.len() - 1) as u32);
    }

    pub fn pop_scope(&mut self) {
        self.scope_stack.pop();
    }

    pub fn current_scope(&self) -> &str {
        let idx = self.scope_stack.last().copied().unwrap_or(0);
        &self.scopes[idx as usize]
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeInfo<'_>> {
        self.nodes.iter().enumerate().map(|(i, n)| NodeInfo {
            index: i,
            kind: n.op.kind(),
            inputs: n.op.inputs().iter().map(|v| v.index()).collect(),
            scope: &self.scopes[n.scope as usize],
            shape: n.value.get().shape(),
            param: n.param,
        })
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        debug_assert_eq!(v.tape, self.id);
        self.nodes[v.index()].value.get()
    }

    /// Value of the node at `index` as reported by [`Tape::nodes`].
    pub fn value_at(&self, index: usize) -> &Tensor<T> {
        self.nodes[index].value.get()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub(crate) fn check(&self, v: Var) -> Result<&Tensor<T>> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(self.nodes[v.index()].value.get())
    }

    pub(crate) fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index()].requires_grad
    }

    fn push_node(&mut self, value: Value<'p, T>, op: Op<T>, param: Option<ParamId>) -> Var {
        let requires_grad = match &op {
            Op::Input | Op::Param => false,
            op => op.inputs().iter().any(|v| self.nodes[v.index()].requires_grad),
        };
        debug_assert!(
            matches!(op, Op::Input | Op::Param)
                || value.get().is_finite()
                || op.inputs().iter().any(|v| !self.value(*v).is_finite()),
            "non-finite output from {:?} in scope `{}`",
            op.kind(),
            self.current_scope()
        );
        let scope = self.scope_stack.last().copied().unwrap_or(0);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            scope,
            param,
        });
        Var {
            tape: self.id,
            index: (self.nodes.len() - 1) as u32,
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.push_node(Value::Owned(value), op, None)
    }

    /// Record a constant or differentiable input.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let v = self.push_node(Value::Owned(value), Op::Input, None);
        self.nodes[v.index()].requires_grad = requires_grad;
        v
    }

    /// Bind a parameter by reference; its value is not copied.
    pub fn param(&mut self, id: ParamId, value: &'p Tensor<T>, requires_grad: bool) -> Var {
        let v = self.push_node(Value::Borrowed(value), Op::Param, Some(id));
        self.nodes[v.index()].requires_grad = requires_grad;
        v
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.check(loss)?;
        if loss_value.numel() != 1 {
            return Err(Error::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index()] = Some(vec![T::one()]);
        for i in (0..=loss.index()).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.backward_node(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.get().shape().to_vec()).collect(),
        })
    }

    /// Gradient slices for every bound parameter that received one.
    pub fn param_grads<'g>(&self, grads: &'g Gradients<T>) -> Vec<(ParamId, &'g [T])> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                let id = n.param?;
                let g = grads.grads[i].as_deref()?;
                Some((id, g))
            })
            .collect()
    }

    fn fault_factor(&self, kind: OpKind) -> T {
        match (self.fault, kind) {
            (Some(Fault::ScaleReluGrad(f)), OpKind::Relu) => T::of(f),
            (Some(Fault::ScaleMatMulGrad(f)), OpKind::MatMul) => T::of(f),
            _ => T::one(),
        }
    }

    fn backward_node(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = node.value.get();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            let n = &self.nodes[v.index()];
            if !n.requires_grad {
                return;
            }
            let slot = grads[v.index()].get_or_insert_with(|| vec![T::zero(); n.value.get().numel()]);
            f(slot);
        };
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, gout));
                acc(*b, &mut |g| add_into(g, gout));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, gout));
                acc(*b, &mut |g| {
                    for (g, &d) in g.iter_mut().zip(gout) {
                        *g -= d;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, &mut |g| {
                    for ((g, &d), &y) in g.iter_mut().zip(gout).zip(bv) {
                        *g += d * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((g, &d), &x) in g.iter_mut().zip(gout).zip(av) {
                        *g += d * x;
                    }
                });
            }
            Op::AddBias(x, b) => {
                acc(*x, &mut |g| add_into(g, gout));
                let width = self.value(*b).numel();
                acc(*b, &mut |g| {
                    for row in gout.chunks_exact(width) {
                        add_into(g, row);
                    }
                });
            }
            Op::MulRow(x, w) => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let width = wv.len();
                acc(*x, &mut |g| {
                    for (grow, drow) in g.chunks_exact_mut(width).zip(gout.chunks_exact(width)) {
                        for k in 0..width {
                            grow[k] += drow[k] * wv[k];
                        }
                    }
                });
                acc(*w, &mut |g| {
                    for (xrow, drow) in xv.chunks_exact(width).zip(gout.chunks_exact(width)) {
                        for k in 0..width {
                            g[k] += drow[k] * xrow[k];
                        }
                    }
                });
            }
            Op::Affine(x, scale) => {
                acc(*x, &mut |g| {
                    for (g, &d) in g.iter_mut().zip(gout) {
                        *g += d * *scale;
                    }
                });
            }
            Op::MulConst(x, c) => {
                acc(*x, &mut |g| {
                    for ((g, &d), &m) in g.iter_mut().zip(gout).zip(c) {
                        *g += d * m;
                    }
                });
            }
            Op::MatMul(a, b) => {
                let f = self.fault_factor(OpKind::MatMul);
                let at = self.value(*a);
                let bt = self.value(*b);
                let (n, k) = (at.shape()[0], at.shape()[1]);
                let m = bt.shape()[1];
                let (av, bv) = (at.data(), bt.data());
                // dA = dC · Bᵀ
                acc(*a, &mut |g| {
                    for r in 0..n {
                        let drow = &gout[r * m..(r + 1) * m];
                        for c in 0..k {
                            let brow = &bv[c * m..(c + 1) * m];
                            let s: T = drow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                            g[r * k + c] += s * f;
                        }
                    }
                });
                // dB = Aᵀ · dC
                acc(*b, &mut |g| {
                    for r in 0..n {
                        let drow = &gout[r * m..(r + 1) * m];
                        for c in 0..k {
                            let a = av[r * k + c] * f;
                            if a == T::zero() {
                                continue;
                            }
                            let grow = &mut g[c * m..(c + 1) * m];
                            for (g, &d) in grow.iter_mut().zip(drow) {
                                *g += a * d;
                            }
                        }
                    }
                });
            }
            Op::Transpose(x) => {
                let (r, c) = (out.shape()[1], out.shape()[0]);
                acc(*x, &mut |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += gout[j * r + i];
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = out.data();
                acc(*x, &mut |g| {
                    for ((g, &d), &y) in g.iter_mut().zip(gout).zip(y) {
                        *g += d * (T::one() - y * y);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = out.data();
                acc(*x, &mut |g| {
                    for ((g, &d), &y) in g.iter_mut().zip(gout).zip(y) {
                        *g += d * y * (T::one() - y);
                    }
                });
            }
            Op::Relu(x) => {
                let f = self.fault_factor(OpKind::Relu);
                let y = out.data();
                acc(*x, &mut |g| {
                    for ((g, &d), &y) in g.iter_mut().zip(gout).zip(y) {
                        if y > T::zero() {
                            *g += d * f;
                        }
                    }
                });
            }
            Op::Concat(xs) => {
                let total = out.last_dim();
                let rows = out.numel() / total;
                let mut offset = 0;
                for x in xs {
                    let w = self.value(*x).last_dim();
                    acc(*x, &mut |g| {
                        for r in 0..rows {
                            add_into(
                                &mut g[r * w..(r + 1) * w],
                                &gout[r * total + offset..r * total + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::Reshape(x) => acc(*x, &mut |g| add_into(g, gout)),
            Op::Gather { table, ids } => {
                let w = out.last_dim();
                acc(*table, &mut |g| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut g[id * w..(id + 1) * w], &gout[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let row = out.numel() / out.shape()[0];
                acc(*x, &mut |g| {
                    add_into(&mut g[start * row..start * row + gout.len()], gout);
                });
            }
            Op::Conv2d { x, kernel, bias } => {
                let xt = self.value(*x);
                let kt = self.value(*kernel);
                if self.requires_grad(*x) {
                    let mut gx = vec![T::zero(); xt.numel()];
                    super::conv::conv2d_backward_input(xt.shape(), kt, gout, &mut gx);
                    acc(*x, &mut |g| add_into(g, &gx));
                }
                if self.requires_grad(*kernel) {
                    let mut gk = vec![T::zero(); kt.numel()];
                    super::conv::conv2d_backward_kernel(xt, kt.shape(), gout, &mut gk);
                    acc(*kernel, &mut |g| add_into(g, &gk));
                }
                if let Some(b) = bias {
                    let f = out.last_dim();
                    acc(*b, &mut |g| {
                        for row in gout.chunks_exact(f) {
                            add_into(g, row);
                        }
                    });
                }
            }
            Op::MaxPool2d { x, argmax } | Op::GlobalMaxPool { x, argmax } => {
                acc(*x, &mut |g| {
                    for (&src, &d) in argmax.iter().zip(gout) {
                        g[src] += d;
                    }
                });
            }
            Op::MaskedMaxTime { x, argmax } => {
                acc(*x, &mut |g| {
                    for (src, &d) in argmax.iter().zip(gout) {
                        if let Some(src) = src {
                            g[*src] += d;
                        }
                    }
                });
            }
            Op::MaskedSoftmax(x) => {
                let width = out.last_dim();
                let y = out.data();
                acc(*x, &mut |g| {
                    for ((grow, yrow), drow) in g
                        .chunks_exact_mut(width)
                        .zip(y.chunks_exact(width))
                        .zip(gout.chunks_exact(width))
                    {
                        let dot: T = yrow.iter().zip(drow).map(|(&a, &b)| a * b).sum();
                        for k in 0..width {
                            grow[k] += yrow[k] * (drow[k] - dot);
                        }
                    }
                });
            }
            Op::AddOuter { base, rows, cols } => {
                let m = out.shape()[1];
                acc(*base, &mut |g| add_into(g, gout));
                acc(*rows, &mut |g| {
                    for (gi, drow) in g.iter_mut().zip(gout.chunks_exact(m)) {
                        *gi += drow.iter().copied().sum();
                    }
                });
                acc(*cols, &mut |g| {
                    for drow in gout.chunks_exact(m) {
                        add_into(g, drow);
                    }
                });
            }
            Op::Interaction(p, h) => {
                let pt = self.value(*p);
                let ht = self.value(*h);
                let (lp, d) = (pt.shape()[0], pt.shape()[1]);
                let lh = ht.shape()[0];
                let (pv, hv) = (pt.data(), ht.data());
                acc(*p, &mut |g| {
                    for i in 0..lp {
                        for j in 0..lh {
                            let base = (i * lh + j) * d;
                            for k in 0..d {
                                g[i * d + k] += gout[base + k] * hv[j * d + k];
                            }
                        }
                    }
                });
                acc(*h, &mut |g| {
                    for i in 0..lp {
                        for j in 0..lh {
                            let base = (i * lh + j) * d;
                            for k in 0..d {
                                g[j * d + k] += gout[base + k] * pv[i * d + k];
                            }
                        }
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, label, probs } => {
                let d = gout[0];
                acc(*logits, &mut |g| {
                    for (k, (g, &p)) in g.iter_mut().zip(probs).enumerate() {
                        let target = if k == *label { T::one() } else { T::zero() };
                        *g += d * (p - target);
                    }
                });
            }
            Op::Sum(x) => {
                let d = gout[0];
                acc(*x, &mut |g| {
                    for g in g.iter_mut() {
                        *g += d;
                    }
                });
            }
            Op::AddN(xs) => {
                for x in xs {
                    acc(*x, &mut |g| add_into(g, gout));
                }
            }
        }
    }
}

#[inline]
fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    tape: u32,
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; zero if `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        assert_eq!(v.tape, self.tape, "variable from another tape");
        let shape = &self.shapes[v.index()];
        match &self.grads[v.index()] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}
