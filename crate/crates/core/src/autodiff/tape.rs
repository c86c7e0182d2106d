use std::cell::{Ref, RefCell};
use std::fmt;

use crate::autodiff::{Tensor, TensorError};
use crate::real::Real;

/// Recorded operation. Indices refer to earlier nodes on the same tape.
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddBias(usize, usize),
    AddConst(usize),
    Relu(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    CausalConv {
        x: usize,
        w: usize,
        b: usize,
        dilation: usize,
    },
    Transpose(usize),
    Reshape(usize),
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    StackRows(Vec<usize>),
    MaskedMeanRows {
        x: usize,
        mask: Vec<bool>,
        count: usize,
    },
    Sum(usize),
    Mean(usize),
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
    grad: Option<Tensor<T>>,
}

struct Inner<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Ordered record of executed operations.
pub struct Tape<T> {
    inner: RefCell<Inner<T>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
            }),
        }
    }

    /// Records an input. Only leaves with `requires_grad` seed gradient flow.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push_node(value, Op::Leaf, requires_grad)
    }

    /// Shorthand for a trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Shorthand for a non-differentiable leaf.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.inner.borrow().consumed
    }

    /// Activation pattern of every ReLU on the tape: `true` where the input is
    /// positive. Two evaluations with equal patterns lie on the same linear
    /// piece of every ReLU, which is what finite-difference checks need.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let inner = self.inner.borrow();
        let mut out = Vec::new();
        for node in &inner.nodes {
            if let Op::Relu(a) = node.op {
                out.extend(inner.nodes[a].value.data().iter().map(|&x| x > T::zero()));
            }
        }
        out
    }

    fn push_node(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var<'_, T> {
        let requires_grad = {
            let inner = self.inner.borrow();
            inputs.iter().any(|&i| inner.nodes[i].requires_grad)
        };
        self.push_node(value, op, requires_grad)
    }

    /// Back-propagates from a scalar `loss`.
    ///
    /// Afterwards every node with `requires_grad` holds a gradient; nodes the
    /// loss does not depend on receive zeros.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<(), TensorError> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let loss_shape = inner.nodes[loss.id].value.shape().to_vec();
        if inner.nodes[loss.id].value.numel() != 1 {
            return Err(TensorError::NotScalar { shape: loss_shape });
        }
        inner.consumed = true;

        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let nodes = &mut inner.nodes;
        for (node, g) in nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                let shape = node.value.shape().to_vec();
                let data = g.unwrap_or_else(|| vec![T::zero(); node.value.numel()]);
                node.grad = Some(Tensor::new(&shape, data).expect("gradient matches value shape"));
            }
        }
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], id: usize, contribution: Vec<T>) {
    match &mut grads[id] {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

/// Pushes `g` (gradient of node `id`) onto the node's inputs.
fn backprop<T: Real>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let wants = |i: usize| nodes[i].requires_grad;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2().unwrap();
            let n = val(*b).shape()[1];
            if wants(*a) {
                // dA = G · Bᵀ
                let bv = val(*b).data();
                let mut da = vec![T::zero(); m * k];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        da[i * k + p] = dot(grow, brow);
                    }
                }
                accumulate(grads, *a, da);
            }
            if wants(*b) {
                // dB = Aᵀ · G
                let av = val(*a).data();
                let mut db = vec![T::zero(); k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let s = av[i * k + p];
                        axpy(&mut db[p * n..(p + 1) * n], s, grow);
                    }
                }
                accumulate(grads, *b, db);
            }
        }
        Op::Add(a, b) => {
            if wants(*a) {
                accumulate(grads, *a, g.to_vec());
            }
            if wants(*b) {
                accumulate(grads, *b, g.to_vec());
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                accumulate(grads, *a, g.to_vec());
            }
            if wants(*b) {
                accumulate(grads, *b, g.iter().map(|&x| -x).collect());
            }
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                let bv = val(*b).data();
                accumulate(grads, *a, g.iter().zip(bv).map(|(&x, &y)| x * y).collect());
            }
            if wants(*b) {
                let av = val(*a).data();
                accumulate(grads, *b, g.iter().zip(av).map(|(&x, &y)| x * y).collect());
            }
        }
        Op::Scale(a, k) => {
            accumulate(grads, *a, g.iter().map(|&x| x * *k).collect());
        }
        Op::AddBias(a, bias) => {
            if wants(*a) {
                accumulate(grads, *a, g.to_vec());
            }
            if wants(*bias) {
                let cols = val(*bias).numel();
                let mut db = vec![T::zero(); cols];
                for row in g.chunks(cols) {
                    for (d, &x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                accumulate(grads, *bias, db);
            }
        }
        Op::AddConst(a) => accumulate(grads, *a, g.to_vec()),
        Op::Relu(a) => {
            let av = val(*a).data();
            let dx = g
                .iter()
                .zip(av)
                .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                .collect();
            accumulate(grads, *a, dx);
        }
        Op::Softmax { x, axis } => {
            let y = nodes[id].value.data();
            let (outer, len, inner) = axis_split(nodes[id].value.shape(), *axis);
            let mut dx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut s = T::zero();
                    for j in 0..len {
                        let p = base + j * inner;
                        s += g[p] * y[p];
                    }
                    for j in 0..len {
                        let p = base + j * inner;
                        dx[p] = y[p] * (g[p] - s);
                    }
                }
            }
            accumulate(grads, *x, dx);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let gv = val(*gamma).data();
            let n = gv.len();
            let nf = T::from_f64(n as f64);
            if wants(*gamma) {
                let mut dg = vec![T::zero(); n];
                for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                    for c in 0..n {
                        dg[c] += grow[c] * hrow[c];
                    }
                }
                accumulate(grads, *gamma, dg);
            }
            if wants(*beta) {
                let mut db = vec![T::zero(); n];
                for grow in g.chunks(n) {
                    for c in 0..n {
                        db[c] += grow[c];
                    }
                }
                accumulate(grads, *beta, db);
            }
            if wants(*x) {
                let mut dx = vec![T::zero(); g.len()];
                for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut mean_gh = T::zero();
                    let mut mean_ghx = T::zero();
                    for c in 0..n {
                        let gh = grow[c] * gv[c];
                        mean_gh += gh;
                        mean_ghx += gh * hrow[c];
                    }
                    mean_gh /= nf;
                    mean_ghx /= nf;
                    let inv = inv_std[r];
                    for c in 0..n {
                        let gh = grow[c] * gv[c];
                        dx[r * n + c] = inv * (gh - mean_gh - hrow[c] * mean_ghx);
                    }
                }
                accumulate(grads, *x, dx);
            }
        }
        Op::CausalConv { x, w, b, dilation } => {
            let (t_len, cin) = val(*x).dims2().unwrap();
            let wshape = val(*w).shape();
            let (cout, k) = (wshape[0], wshape[2]);
            if wants(*b) {
                let mut db = vec![T::zero(); cout];
                for grow in g.chunks(cout) {
                    for (d, &v) in db.iter_mut().zip(grow) {
                        *d += v;
                    }
                }
                accumulate(grads, *b, db);
            }
            let xv = val(*x).data();
            if wants(*w) {
                // tap-major layout [k][cin][cout], permuted back afterwards
                let mut dwp = vec![T::zero(); k * cin * cout];
                for t in 0..t_len {
                    let grow = &g[t * cout..(t + 1) * cout];
                    for j in 0..k {
                        let shift = (k - 1 - j) * dilation;
                        if shift > t {
                            continue;
                        }
                        let xrow = &xv[(t - shift) * cin..(t - shift + 1) * cin];
                        for (i, &xi) in xrow.iter().enumerate() {
                            let base = (j * cin + i) * cout;
                            axpy(&mut dwp[base..base + cout], xi, grow);
                        }
                    }
                }
                let mut dw = vec![T::zero(); cout * cin * k];
                for j in 0..k {
                    for i in 0..cin {
                        for o in 0..cout {
                            dw[(o * cin + i) * k + j] = dwp[(j * cin + i) * cout + o];
                        }
                    }
                }
                accumulate(grads, *w, dw);
            }
            if wants(*x) {
                let wp = tap_major(val(*w).data(), cout, cin, k);
                let mut dx = vec![T::zero(); t_len * cin];
                for t in 0..t_len {
                    let grow = &g[t * cout..(t + 1) * cout];
                    for j in 0..k {
                        let shift = (k - 1 - j) * dilation;
                        if shift > t {
                            continue;
                        }
                        let src = t - shift;
                        for i in 0..cin {
                            let base = (j * cin + i) * cout;
                            dx[src * cin + i] += dot(grow, &wp[base..base + cout]);
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = val(*a).dims2().unwrap();
            let mut dx = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    dx[i * c + j] = g[j * r + i];
                }
            }
            accumulate(grads, *a, dx);
        }
        Op::Reshape(a) => accumulate(grads, *a, g.to_vec()),
        Op::SliceCols { x, start } => {
            let (rows, cols) = val(*x).dims2().unwrap();
            let width = nodes[id].value.shape()[1];
            let mut dx = vec![T::zero(); rows * cols];
            for r in 0..rows {
                dx[r * cols + start..r * cols + start + width]
                    .copy_from_slice(&g[r * width..(r + 1) * width]);
            }
            accumulate(grads, *x, dx);
        }
        Op::ConcatCols(parts) => {
            let total = nodes[id].value.shape()[1];
            let rows = nodes[id].value.shape()[0];
            let mut offset = 0;
            for &p in parts {
                let width = val(p).shape()[1];
                if wants(p) {
                    let mut dp = vec![T::zero(); rows * width];
                    for r in 0..rows {
                        dp[r * width..(r + 1) * width]
                            .copy_from_slice(&g[r * total + offset..r * total + offset + width]);
                    }
                    accumulate(grads, p, dp);
                }
                offset += width;
            }
        }
        Op::StackRows(parts) => {
            let width = nodes[id].value.shape()[1];
            for (r, &p) in parts.iter().enumerate() {
                if wants(p) {
                    accumulate(grads, p, g[r * width..(r + 1) * width].to_vec());
                }
            }
        }
        Op::MaskedMeanRows { x, mask, count } => {
            let (rows, cols) = val(*x).dims2().unwrap();
            let inv = T::one() / T::from_f64(*count as f64);
            let mut dx = vec![T::zero(); rows * cols];
            for (r, &valid) in mask.iter().enumerate() {
                if valid {
                    for c in 0..cols {
                        dx[r * cols + c] = g[c] * inv;
                    }
                }
            }
            accumulate(grads, *x, dx);
        }
        Op::Sum(a) => accumulate(grads, *a, vec![g[0]; val(*a).numel()]),
        Op::Mean(a) => {
            let n = val(*a).numel();
            let v = g[0] / T::from_f64(n as f64);
            accumulate(grads, *a, vec![v; n]);
        }
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

fn axpy<T: Real>(acc: &mut [T], s: T, x: &[T]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += s * v;
    }
}

/// `[cout][cin][k]` -> `[k][cin][cout]`.
fn tap_major<T: Real>(w: &[T], cout: usize, cin: usize, k: usize) -> Vec<T> {
    let mut wp = vec![T::zero(); w.len()];
    for o in 0..cout {
        for i in 0..cin {
            for j in 0..k {
                wp[(j * cin + i) * cout + o] = w[(o * cin + i) * k + j];
            }
        }
    }
    wp
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(orow, a[i * k + p], &b[p * n..(p + 1) * n]);
        }
    }
    out
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Borrow of the forward value.
    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.inner.borrow(), |inner| {
            &inner.nodes[self.id].value
        })
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Gradient left by [`Tape::backward`], if any.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    pub fn backward(&self) -> Result<(), TensorError> {
        self.tape.backward(*self)
    }

    fn same_tape(&self, other: &Var<'t, T>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars belong to different tapes"
        );
    }

    fn binary_same_shape(
        &self,
        other: Var<'t, T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, TensorError> {
        self.same_tape(&other);
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(a.shape(), data)
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&other);
        let out = {
            let a = self.value();
            let b = other.value();
            let mismatch = || TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            };
            let ((m, k), (k2, n)) = match (a.dims2(), b.dims2()) {
                (Ok(x), Ok(y)) => (x, y),
                _ => return Err(mismatch()),
            };
            if k != k2 {
                return Err(mismatch());
            }
            Tensor::new(&[m, n], matmul_raw(a.data(), b.data(), m, k, n))?
        };
        Ok(self
            .tape
            .push(out, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let out = self.binary_same_shape(other, "add", |x, y| x + y)?;
        Ok(self
            .tape
            .push(out, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let out = self.binary_same_shape(other, "sub", |x, y| x - y)?;
        Ok(self
            .tape
            .push(out, Op::Sub(self.id, other.id), &[self.id, other.id]))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        let out = self.binary_same_shape(other, "mul", |x, y| x * y)?;
        Ok(self
            .tape
            .push(out, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn scale(&self, k: T) -> Var<'t, T> {
        let out = self.value().map(|x| x * k);
        self.tape.push(out, Op::Scale(self.id, k), &[self.id])
    }

    /// Adds `bias` (`[cols]`) to every row of a `[rows, cols]` matrix.
    pub fn add_bias(&self, bias: Var<'t, T>) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&bias);
        let out = {
            let a = self.value();
            let b = bias.value();
            let cols = match a.dims2() {
                Ok((_, c)) if b.rank() == 1 && b.numel() == c => c,
                _ => {
                    return Err(TensorError::ShapeMismatch {
                        op: "add_bias",
                        lhs: a.shape().to_vec(),
                        rhs: b.shape().to_vec(),
                    })
                }
            };
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(cols) {
                for (x, &bi) in row.iter_mut().zip(b.data()) {
                    *x += bi;
                }
            }
            Tensor::new(a.shape(), data)?
        };
        Ok(self
            .tape
            .push(out, Op::AddBias(self.id, bias.id), &[self.id, bias.id]))
    }

    /// Adds a fixed, non-differentiable tensor of the same shape.
    pub fn add_const(&self, c: &Tensor<T>) -> Result<Var<'t, T>, TensorError> {
        let out = {
            let a = self.value();
            if a.shape() != c.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "add_const",
                    lhs: a.shape().to_vec(),
                    rhs: c.shape().to_vec(),
                });
            }
            let data = a
                .data()
                .iter()
                .zip(c.data())
                .map(|(&x, &y)| x + y)
                .collect();
            Tensor::new(a.shape(), data)?
        };
        Ok(self.tape.push(out, Op::AddConst(self.id), &[self.id]))
    }

    /// `max(0, x)`; the gradient at exactly zero is zero.
    pub fn relu(&self) -> Var<'t, T> {
        let out = self
            .value()
            .map(|x| if x > T::zero() { x } else { T::zero() });
        self.tape.push(out, Op::Relu(self.id), &[self.id])
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>, TensorError> {
        let out = {
            let a = self.value();
            if axis >= a.rank() {
                return Err(TensorError::InvalidAxis {
                    axis,
                    rank: a.rank(),
                });
            }
            let (outer, len, inner) = axis_split(a.shape(), axis);
            let x = a.data();
            let mut y = vec![T::zero(); x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let mut max = T::neg_infinity();
                    for j in 0..len {
                        max = max.max(x[base + j * inner]);
                    }
                    let mut sum = T::zero();
                    for j in 0..len {
                        let e = (x[base + j * inner] - max).exp();
                        y[base + j * inner] = e;
                        sum += e;
                    }
                    for j in 0..len {
                        y[base + j * inner] /= sum;
                    }
                }
            }
            Tensor::new(a.shape(), y)?
        };
        Ok(self
            .tape
            .push(out, Op::Softmax { x: self.id, axis }, &[self.id]))
    }

    /// Normalizes over the last axis, then applies `gamma * x̂ + beta`.
    ///
    /// A row whose entries are all equal normalizes to exactly zero.
    pub fn layer_norm(
        &self,
        gamma: Var<'t, T>,
        beta: Var<'t, T>,
        eps: T,
    ) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&gamma);
        self.same_tape(&beta);
        let (out, xhat, inv_std) = {
            let a = self.value();
            let gv = gamma.value();
            let bv = beta.value();
            let n = *a.shape().last().unwrap_or(&0);
            if n == 0 || gv.shape() != [n] || bv.shape() != [n] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: a.shape().to_vec(),
                    rhs: gv.shape().to_vec(),
                });
            }
            let nf = T::from_f64(n as f64);
            let x = a.data();
            let mut out = vec![T::zero(); x.len()];
            let mut xhat = vec![T::zero(); x.len()];
            let mut inv_std = Vec::with_capacity(x.len() / n);
            for (r, row) in x.chunks(n).enumerate() {
                let constant = row.iter().all(|&v| v == row[0]);
                let mean = row.iter().copied().sum::<T>() / nf;
                let var = if constant {
                    T::zero()
                } else {
                    row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf
                };
                let inv = T::one() / (var + eps).sqrt();
                inv_std.push(inv);
                for c in 0..n {
                    let h = if constant {
                        T::zero()
                    } else {
                        (row[c] - mean) * inv
                    };
                    xhat[r * n + c] = h;
                    out[r * n + c] = h * gv.data()[c] + bv.data()[c];
                }
            }
            (Tensor::new(a.shape(), out)?, xhat, inv_std)
        };
        Ok(self.tape.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                xhat,
                inv_std,
            },
            &[self.id, gamma.id, beta.id],
        ))
    }

    /// Dilated causal convolution of a `[T, cin]` sequence.
    ///
    /// `weight` is `[cout, cin, k]`, `bias` is `[cout]`. Tap `j` reads the
    /// input `(k - 1 - j) · dilation` steps back; reads before the start of
    /// the sequence see zeros, so the output keeps length `T`.
    pub fn causal_conv1d(
        &self,
        weight: Var<'t, T>,
        bias: Var<'t, T>,
        dilation: usize,
    ) -> Result<Var<'t, T>, TensorError> {
        self.same_tape(&weight);
        self.same_tape(&bias);
        if dilation == 0 {
            return Err(TensorError::Invalid {
                op: "causal_conv1d",
                msg: "dilation must be positive".into(),
            });
        }
        let out = {
            let x = self.value();
            let w = weight.value();
            let b = bias.value();
            let (t_len, cin) = x.dims2()?;
            let mismatch = || TensorError::ShapeMismatch {
                op: "causal_conv1d",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            };
            let [cout, wcin, k] = w.shape()[..] else {
                return Err(mismatch());
            };
            if wcin != cin || b.shape() != [cout] || k == 0 {
                return Err(mismatch());
            }
            let wp = tap_major(w.data(), cout, cin, k);
            let xv = x.data();
            let mut out = vec![T::zero(); t_len * cout];
            for t in 0..t_len {
                let orow = &mut out[t * cout..(t + 1) * cout];
                orow.copy_from_slice(b.data());
                for j in 0..k {
                    let shift = (k - 1 - j) * dilation;
                    if shift > t {
                        continue;
                    }
                    let xrow = &xv[(t - shift) * cin..(t - shift + 1) * cin];
                    for (i, &xi) in xrow.iter().enumerate() {
                        let base = (j * cin + i) * cout;
                        axpy(orow, xi, &wp[base..base + cout]);
                    }
                }
            }
            Tensor::new(&[t_len, cout], out)?
        };
        Ok(self.tape.push(
            out,
            Op::CausalConv {
                x: self.id,
                w: weight.id,
                b: bias.id,
                dilation,
            },
            &[self.id, weight.id, bias.id],
        ))
    }

    pub fn transpose(&self) -> Result<Var<'t, T>, TensorError> {
        let out = {
            let a = self.value();
            let (r, c) = a.dims2()?;
            let mut data = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = a.data()[i * c + j];
                }
            }
            Tensor::new(&[c, r], data)?
        };
        Ok(self.tape.push(out, Op::Transpose(self.id), &[self.id]))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>, TensorError> {
        let out = self.value().clone().reshape(shape)?;
        Ok(self.tape.push(out, Op::Reshape(self.id), &[self.id]))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Var<'t, T>, TensorError> {
        let out = {
            let a = self.value();
            let (rows, cols) = a.dims2()?;
            if start + width > cols {
                return Err(TensorError::Invalid {
                    op: "slice_cols",
                    msg: format!("columns {start}..{} exceed {cols}", start + width),
                });
            }
            let mut data = Vec::with_capacity(rows * width);
            for r in 0..rows {
                data.extend_from_slice(&a.row(r)[start..start + width]);
            }
            Tensor::new(&[rows, width], data)?
        };
        Ok(self
            .tape
            .push(out, Op::SliceCols { x: self.id, start }, &[self.id]))
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(parts: &[Var<'t, T>]) -> Result<Var<'t, T>, TensorError> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat_cols",
            msg: "no inputs".into(),
        })?;
        let tape = first.tape;
        let out = {
            let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let rows = values[0].dims2()?.0;
            let mut widths = Vec::with_capacity(values.len());
            for v in &values {
                let (r, c) = v.dims2()?;
                if r != rows {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat_cols",
                        lhs: values[0].shape().to_vec(),
                        rhs: v.shape().to_vec(),
                    });
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &values {
                    data.extend_from_slice(v.row(r));
                }
            }
            Tensor::new(&[rows, total], data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(out, Op::ConcatCols(ids.clone()), &ids))
    }

    /// Stacks equal-length vectors into a `[n, len]` matrix.
    pub fn stack_rows(parts: &[Var<'t, T>]) -> Result<Var<'t, T>, TensorError> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "stack_rows",
            msg: "no inputs".into(),
        })?;
        let tape = first.tape;
        let out = {
            let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let width = values[0].numel();
            let mut data = Vec::with_capacity(values.len() * width);
            for v in &values {
                if v.rank() != 1 || v.numel() != width {
                    return Err(TensorError::ShapeMismatch {
                        op: "stack_rows",
                        lhs: values[0].shape().to_vec(),
                        rhs: v.shape().to_vec(),
                    });
                }
                data.extend_from_slice(v.data());
            }
            Tensor::new(&[values.len(), width], data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(out, Op::StackRows(ids.clone()), &ids))
    }

    /// Mean over the rows whose mask entry is `true`. Masked rows are never read.
    pub fn masked_mean_rows(&self, mask: &[bool]) -> Result<Var<'t, T>, TensorError> {
        let (out, count) = {
            let a = self.value();
            let (rows, cols) = a.dims2()?;
            if mask.len() != rows {
                return Err(TensorError::MaskLength {
                    op: "masked_mean_rows",
                    mask: mask.len(),
                    len: rows,
                });
            }
            let count = mask.iter().filter(|&&m| m).count();
            if count == 0 {
                return Err(TensorError::AllMasked {
                    op: "masked_mean_rows",
                });
            }
            let mut acc = vec![T::zero(); cols];
            for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                for (s, &v) in acc.iter_mut().zip(a.row(r)) {
                    *s += v;
                }
            }
            let n = T::from_f64(count as f64);
            for s in &mut acc {
                *s /= n;
            }
            (Tensor::new(&[cols], acc)?, count)
        };
        Ok(self.tape.push(
            out,
            Op::MaskedMeanRows {
                x: self.id,
                mask: mask.to_vec(),
                count,
            },
            &[self.id],
        ))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Var<'t, T> {
        let s = self.value().data().iter().copied().sum();
        self.tape
            .push(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&self) -> Var<'t, T> {
        let m = {
            let v = self.value();
            v.data().iter().copied().sum::<T>() / T::from_f64(v.numel() as f64)
        };
        self.tape
            .push(Tensor::scalar(m), Op::Mean(self.id), &[self.id])
    }
}
