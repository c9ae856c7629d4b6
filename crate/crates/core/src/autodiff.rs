//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every primitive appends a node whose inputs were
//! created earlier, so node order is a topological order and the backward
//! sweep is a single reverse pass that visits each node once. Gradients can
//! be taken with respect to any leaf created with `requires_grad`, which
//! covers both model parameters and designated inputs such as latent codes.
//!
//! Shape rules:
//! * `add`, `sub`, `mul`: equal shapes, or one operand's shape is a suffix of
//!   the other's (it is repeated over the leading axes; a scalar is the empty
//!   suffix).
//! * `matmul`: `[m, k] · [k, n] -> [m, n]`.
//! * `sum`, `mean`: any shape to `[]`.
//! * `concat(axis)`, `slice(axis, start, end)`: all other extents must match.
//! * `log_softmax`: over the last axis.
//! * `gather(indices)`: `[n, c]` with `n` indices in `[0, c)` to `[n]`.
//!
//! Non-smooth points use the left/interior subgradient: `relu'(0) = 0`,
//! `leaky_relu'(0) = slope`, and `clamp` passes gradient only strictly inside
//! `(lo, hi)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, numel, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    GradScale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Clamp(Var, f64, f64),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of primitive operations, rebuilt for every forward pass.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Splits `shape` around `axis` into (outer, extent, inner) element counts.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn is_suffix(short: &[usize], long: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. Only leaves with `requires_grad` can be passed
    /// as `wrt` to [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, op, rg)
    }

    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if is_suffix(sb, sa) {
            Ok(sa.to_vec())
        } else if is_suffix(sa, sb) {
            Ok(sb.to_vec())
        } else {
            Err(Error::shape(
                op,
                Some(self.nodes.len()),
                format!(
                    "operands {:?} and {:?} are not broadcast-compatible",
                    sa, sb
                ),
            ))
        }
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let shape = self.broadcast_shape(op_name, a, b)?;
        let va = self.nodes[a.0].value.data();
        let vb = self.nodes[b.0].value.data();
        let n = numel(&shape);
        let data: Vec<f64> = if va.len() == vb.len() {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else if va.len() == n {
            let m = vb.len();
            (0..n).map(|i| f(va[i], vb[i % m])).collect()
        } else {
            let m = va.len();
            (0..n).map(|i| f(va[i % m], vb[i])).collect()
        };
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                Some(self.nodes.len()),
                format!("cannot multiply {:?} by {:?}", sa, sb),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            m,
            k,
            n,
        );
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `c · x`.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| c * v)
    }

    /// `x + c`.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    /// Identity in the forward pass; multiplies the incoming gradient by `c`
    /// in the backward pass. `c = -λ` gives a gradient-reversal layer.
    pub fn grad_scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::GradScale(x, c), |v| v)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, Op::LeakyRelu(x, slope), |v| {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), libm::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), libm::log)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::shape(
                "clamp",
                Some(self.nodes.len()),
                format!("empty interval [{}, {}]", lo, hi),
            ));
        }
        Ok(self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.nodes[x.0].requires_grad;
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::shape(
                "mean",
                Some(self.nodes.len()),
                "mean of an empty tensor".into(),
            ));
        }
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Tensor::scalar(s / n as f64), Op::Mean(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec()).map_err(|_| {
            Error::shape(
                "reshape",
                Some(self.nodes.len()),
                format!("cannot view {:?} as {:?}", self.shape(x), shape),
            )
        })?;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let node = Some(self.nodes.len());
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", node, "no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape(
                "concat",
                node,
                format!("axis {} out of range for {:?}", axis, base),
            ));
        }
        let mut extent = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    node,
                    format!("{:?} does not match {:?} off axis {}", s, base, axis),
                ));
            }
            extent += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = extent;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let chunk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = parts.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Concat(parts.to_vec(), axis),
            rg,
        ))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start > end || end > s[axis] {
            return Err(Error::shape(
                "slice",
                Some(self.nodes.len()),
                format!("range {}..{} on axis {} of {:?}", start, end, axis, s),
            ));
        }
        let (outer, ext, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * ext * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Slice {
                input: x,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let c = *s.last().ok_or_else(|| {
            Error::shape("log_softmax", Some(self.nodes.len()), "scalar input".into())
        })?;
        if c == 0 {
            return Err(Error::shape(
                "log_softmax",
                Some(self.nodes.len()),
                "zero-width last axis".into(),
            ));
        }
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + libm::log(row.iter().map(|&v| libm::exp(v - m)).sum::<f64>());
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Tensor::new(s, data)?, Op::LogSoftmax(x), rg))
    }

    /// Picks `x[i, indices[i]]` for each row of a `[n, c]` tensor.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        let node = Some(self.nodes.len());
        if s.len() != 2 || s[0] != indices.len() {
            return Err(Error::shape(
                "gather",
                node,
                format!("{} indices for input {:?}", indices.len(), s),
            ));
        }
        let c = s[1];
        if let Some(bad) = indices.iter().find(|&&i| i >= c) {
            return Err(Error::shape(
                "gather",
                node,
                format!("index {} out of range for width {}", bad, c),
            ));
        }
        let v = self.value(x).data();
        let data: Vec<f64> = indices
            .iter()
            .enumerate()
            .map(|(r, &i)| v[r * c + i])
            .collect();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(Tensor::vector(data), Op::Gather(x, indices.to_vec()), rg))
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// Leaves unreachable from `output` get a zero gradient.
    pub fn backward(&self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let out_shape = self.shape(output);
        if !out_shape.is_empty() {
            return Err(Error::NonScalarOutput(out_shape.to_vec()));
        }
        for w in wrt {
            if !self.nodes[w.0].requires_grad {
                return Err(Error::NotDifferentiable(w.0));
            }
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Add(a, b) => {
                    self.accumulate_broadcast(&mut grads, *a, &g, 1.0);
                    self.accumulate_broadcast(&mut grads, *b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    self.accumulate_broadcast(&mut grads, *a, &g, 1.0);
                    self.accumulate_broadcast(&mut grads, *b, &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let n = g.len();
                    let va = self.value(*a).data();
                    let vb = self.value(*b).data();
                    if self.nodes[a.0].requires_grad {
                        let ga: Vec<f64> = (0..n).map(|i| g[i] * vb[i % vb.len()]).collect();
                        self.accumulate_broadcast(&mut grads, *a, &ga, 1.0);
                    }
                    if self.nodes[b.0].requires_grad {
                        let gb: Vec<f64> = (0..n).map(|i| g[i] * va[i % va.len()]).collect();
                        self.accumulate_broadcast(&mut grads, *b, &gb, 1.0);
                    }
                }
                Op::MatMul(a, b) => {
                    let sa = self.shape(*a);
                    let sb = self.shape(*b);
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    if self.nodes[a.0].requires_grad {
                        let slot = slot(&mut grads, a.0, m * k);
                        matmul_bt_acc(&g, self.value(*b).data(), slot, m, n, k);
                    }
                    if self.nodes[b.0].requires_grad {
                        let slot = slot(&mut grads, b.0, k * n);
                        matmul_at_acc(self.value(*a).data(), &g, slot, m, k, n);
                    }
                }
                Op::Scale(x, c) | Op::GradScale(x, c) => {
                    let c = *c;
                    self.accumulate_map(&mut grads, *x, &g, |_, gi| c * gi);
                }
                Op::AddScalar(x) | Op::Reshape(x) => {
                    self.accumulate_map(&mut grads, *x, &g, |_, gi| gi);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    self.accumulate_map(
                        &mut grads,
                        *x,
                        &g,
                        |i, gi| if xv[i] > 0.0 { gi } else { 0.0 },
                    );
                }
                Op::LeakyRelu(x, slope) => {
                    let xv = self.value(*x).data();
                    let s = *slope;
                    self.accumulate_map(
                        &mut grads,
                        *x,
                        &g,
                        |i, gi| if xv[i] > 0.0 { gi } else { s * gi },
                    );
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    self.accumulate_map(&mut grads, *x, &g, |i, gi| gi * y[i] * (1.0 - y[i]));
                }
                Op::Exp(x) => {
                    let y = node.value.data();
                    self.accumulate_map(&mut grads, *x, &g, |i, gi| gi * y[i]);
                }
                Op::Log(x) => {
                    let xv = self.value(*x).data();
                    self.accumulate_map(&mut grads, *x, &g, |i, gi| gi / xv[i]);
                }
                Op::Clamp(x, lo, hi) => {
                    let xv = self.value(*x).data();
                    let (lo, hi) = (*lo, *hi);
                    self.accumulate_map(&mut grads, *x, &g, |i, gi| {
                        if xv[i] > lo && xv[i] < hi {
                            gi
                        } else {
                            0.0
                        }
                    });
                }
                Op::Sum(x) | Op::Mean(x) => {
                    let n = self.value(*x).len();
                    let g0 = match node.op {
                        Op::Mean(_) => g[0] / n as f64,
                        _ => g[0],
                    };
                    if self.nodes[x.0].requires_grad {
                        for d in slot(&mut grads, x.0, n) {
                            *d += g0;
                        }
                    }
                }
                Op::Concat(parts, axis) => {
                    let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                    let mut offset = 0;
                    let total = node.value.shape()[*axis] * inner;
                    for p in parts {
                        let chunk = self.shape(*p)[*axis] * inner;
                        if self.nodes[p.0].requires_grad {
                            let slot = slot(&mut grads, p.0, outer * chunk);
                            for o in 0..outer {
                                let src = &g[o * total + offset..o * total + offset + chunk];
                                for (d, s) in slot[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        offset += chunk;
                    }
                }
                Op::Slice { input, axis, start } => {
                    let in_shape = self.shape(*input);
                    let (outer, ext, inner) = axis_split(in_shape, *axis);
                    let width = node.value.shape()[*axis] * inner;
                    let slot = slot(&mut grads, input.0, outer * ext * inner);
                    for o in 0..outer {
                        let base = o * ext * inner + start * inner;
                        for (d, s) in slot[base..base + width]
                            .iter_mut()
                            .zip(&g[o * width..(o + 1) * width])
                        {
                            *d += s;
                        }
                    }
                }
                Op::LogSoftmax(x) => {
                    let c = *node.value.shape().last().unwrap_or(&1);
                    let y = node.value.data();
                    let slot = slot(&mut grads, x.0, y.len());
                    for ((yr, gr), dr) in y.chunks(c).zip(g.chunks(c)).zip(slot.chunks_mut(c)) {
                        let gsum: f64 = gr.iter().sum();
                        for j in 0..c {
                            dr[j] += gr[j] - libm::exp(yr[j]) * gsum;
                        }
                    }
                }
                Op::Gather(x, indices) => {
                    let c = self.shape(*x)[1];
                    let slot = slot(&mut grads, x.0, indices.len() * c);
                    for (r, &i) in indices.iter().enumerate() {
                        slot[r * c + i] += g[r];
                    }
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|w| {
                let shape = self.shape(*w).to_vec();
                match &grads[w.0] {
                    Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches its leaf"),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect())
    }

    fn accumulate_map(
        &self,
        grads: &mut [Option<Vec<f64>>],
        x: Var,
        g: &[f64],
        f: impl Fn(usize, f64) -> f64,
    ) {
        if !self.nodes[x.0].requires_grad {
            return;
        }
        let slot = slot(grads, x.0, self.value(x).len());
        for (i, (d, &gi)) in slot.iter_mut().zip(g).enumerate() {
            *d += f(i, gi);
        }
    }

    /// Adds `c · g` into `x`'s gradient, summing over repeated blocks when `x`
    /// was broadcast.
    fn accumulate_broadcast(&self, grads: &mut [Option<Vec<f64>>], x: Var, g: &[f64], c: f64) {
        if !self.nodes[x.0].requires_grad {
            return;
        }
        let m = self.value(x).len();
        let slot = slot(grads, x.0, m);
        if m == g.len() {
            for (d, &gi) in slot.iter_mut().zip(g) {
                *d += c * gi;
            }
        } else {
            for block in g.chunks(m) {
                for (d, &gi) in slot.iter_mut().zip(block) {
                    *d += c * gi;
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut [f64] {
    grads[idx]
        .get_or_insert_with(|| vec![0.0; len])
        .as_mut_slice()
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}
