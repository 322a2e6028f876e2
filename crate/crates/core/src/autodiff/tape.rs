use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryKind {
    Neg,
    Tanh,
    Square,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Binary(BinaryKind, Var, Var),
    Unary(UnaryKind, Var),
    /// `scale * a + shift`; the shift has no adjoint
    Affine { a: Var, scale: f64 },
    MatMul(Var, Var),
    /// `[m×n] + [n]` added to every row.
    AddBias(Var, Var),
    /// `[m×n]` with row `i` scaled by `s[i]`.
    MulRows(Var, Var),
    ConcatCols(Vec<Var>),
    /// `order`-th time derivative of the interleaved (sin, cos) embedding.
    Sinusoid { t: Var, freqs: Vec<f64>, order: u32 },
    SumAll(Var),
    StopGrad,
    SgLambda { z: Var, lambda: f64 },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only computation record for one differentiation pass.
///
/// Nodes are pushed in evaluation order, so the node list is already a
/// topological order. [`Tape::backward`] consumes the record.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    second_order: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            second_order: true,
        }
    }

    /// A record that refuses graph-attached Jacobian-vector products.
    pub fn first_order_only() -> Self {
        Self {
            nodes: Vec::new(),
            second_order: false,
        }
    }

    pub fn supports_second_order(&self) -> bool {
        self.second_order
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
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

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input. Gradients are reported for leaves.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A constant: never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Const, value, false)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = if av.shape() == bv.shape() {
            av.zip_map(bv, |x, y| apply_binary(kind, x, y))
        } else if bv.is_scalar() {
            let y = bv.item();
            av.map(|x| apply_binary(kind, x, y))
        } else if av.is_scalar() {
            let x = av.item();
            bv.map(|y| apply_binary(kind, x, y))
        } else {
            return Err(Error::ShapeMismatch {
                op: binary_name(kind),
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Binary(kind, a, b), value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: Var) -> Var {
        let value = match kind {
            UnaryKind::Neg => self.value(a).map(|x| -x),
            UnaryKind::Tanh => self.value(a).map(Float::tanh),
            UnaryKind::Square => self.value(a).map(|x| x * x),
        };
        let rg = self.rg(&[a]);
        self.push(Op::Unary(kind, a), value, rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Neg, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Tanh, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryKind::Square, a)
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| scale * x + shift);
        let rg = self.rg(&[a]);
        self.push(Op::Affine { a, scale }, value, rg)
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).require_matrix("matmul")?;
        let (k2, n) = self.value(b).require_matrix("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let data = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], data)?, rg))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.value(a).require_matrix("add_bias")?;
        let bv = self.value(bias);
        if bv.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                left: vec![m, n],
                right: bv.shape().to_vec(),
            });
        }
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Op::AddBias(a, bias), Tensor::new(vec![m, n], data)?, rg))
    }

    pub fn mul_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (m, n) = self.value(a).require_matrix("mul_rows")?;
        let sv = self.value(s);
        if sv.shape() != [m] {
            return Err(Error::ShapeMismatch {
                op: "mul_rows",
                left: vec![m, n],
                right: sv.shape().to_vec(),
            });
        }
        let mut data = self.value(a).data().to_vec();
        for (row, &k) in data.chunks_mut(n).zip(sv.data()) {
            for x in row {
                *x *= k;
            }
        }
        let rg = self.rg(&[a, s]);
        Ok(self.push(Op::MulRows(a, s), Tensor::new(vec![m, n], data)?, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = match parts.first() {
            Some(&p) => self.value(p).require_matrix("concat_cols")?.0,
            None => return Err(Error::Invalid("concat_cols of nothing".into())),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (rows, cols) = self.value(p).require_matrix("concat_cols")?;
            if rows != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: vec![m],
                    right: vec![rows],
                });
            }
            widths.push(cols);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::new(vec![m, total], data)?,
            rg,
        ))
    }

    /// Interleaved `(sin ω_k t, cos ω_k t)` features of a `[b]` time vector,
    /// differentiated `order` times in `t`. Output is `[b × 2K]`.
    pub fn sinusoid(&mut self, t: Var, freqs: &[f64], order: u32) -> Result<Var> {
        let tv = self.value(t);
        if tv.shape().len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "sinusoid",
                left: tv.shape().to_vec(),
                right: vec![0],
            });
        }
        let value = sinusoid_values(tv.data(), freqs, order);
        let rg = self.rg(&[t]);
        Ok(self.push(
            Op::Sinusoid {
                t,
                freqs: freqs.to_vec(),
                order,
            },
            value,
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(Op::SumAll(a), value, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Passes the value through; contributes exactly zero gradient.
    pub fn stopgrad(&mut self, z: Var) -> Var {
        let value = self.value(z).clone();
        self.push(Op::StopGrad, value, false)
    }

    /// `λ·z + (1−λ)·stopgrad(z)`.
    ///
    /// The value is `z` itself, bit for bit, for every λ; the adjoint
    /// reaching `z` is `λ` times the incoming one.
    pub fn sg_lambda(&mut self, z: Var, lambda: f64) -> Result<Var> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::LambdaOutOfRange(lambda));
        }
        let value = self.value(z).clone();
        let rg = lambda > 0.0 && self.rg(&[z]);
        Ok(self.push(Op::SgLambda { z, lambda }, value, rg))
    }

    /// Reverse sweep from a scalar `loss`. Consumes the record.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss).to_vec();
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(&shape, 1.0));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            if matches!(self.nodes[idx].op, Op::Leaf) {
                adj[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut adj);
        }

        let grads = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, n)| matches!(n.op, Op::Leaf) && *i <= loss.0)
            .map(|(i, n)| {
                let g = adj
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(n.value.shape()));
                (Var(i), g)
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut adj[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Adjoint of a broadcast operand: sums back down when it was a scalar.
    fn reduce_to(&self, v: Var, g: Tensor) -> Tensor {
        let shape = self.shape(v);
        if shape == g.shape() {
            g
        } else {
            Tensor::full(shape, g.sum())
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf | Op::Const | Op::StopGrad => {}
            Op::Binary(kind, a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = if self.requires_grad(*a) {
                    Some(match kind {
                        BinaryKind::Add | BinaryKind::Sub => g.clone(),
                        BinaryKind::Mul => broadcast_zip(g, bv, |g, b| g * b),
                        BinaryKind::Div => broadcast_zip(g, bv, |g, b| g / b),
                    })
                } else {
                    None
                };
                let gb = if self.requires_grad(*b) {
                    Some(match kind {
                        BinaryKind::Add => g.clone(),
                        BinaryKind::Sub => g.map(|x| -x),
                        BinaryKind::Mul => broadcast_zip(g, av, |g, a| g * a),
                        BinaryKind::Div => {
                            // −g·a/b² = −g·out/b
                            let t = broadcast_zip(g, &node.value, |g, o| g * o);
                            broadcast_zip(&t, bv, |x, b| -x / b)
                        }
                    })
                } else {
                    None
                };
                if let Some(ga) = ga {
                    let ga = self.reduce_to(*a, ga);
                    self.accumulate(adj, *a, ga);
                }
                if let Some(gb) = gb {
                    let gb = self.reduce_to(*b, gb);
                    self.accumulate(adj, *b, gb);
                }
            }
            Op::Unary(kind, a) => {
                let ga = match kind {
                    UnaryKind::Neg => g.map(|x| -x),
                    UnaryKind::Tanh => g.zip_map(&node.value, |g, y| g * (1.0 - y * y)),
                    UnaryKind::Square => g.zip_map(self.value(*a), |g, x| 2.0 * x * g),
                };
                self.accumulate(adj, *a, ga);
            }
            Op::Affine { a, scale, .. } => {
                let s = *scale;
                self.accumulate(adj, *a, g.map(|x| s * x));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.requires_grad(*a) {
                    let d = matmul_nt(g.data(), bv.data(), m, n, k);
                    self.accumulate(adj, *a, tensor(vec![m, k], d));
                }
                if self.requires_grad(*b) {
                    let d = matmul_tn(av.data(), g.data(), m, k, n);
                    self.accumulate(adj, *b, tensor(vec![k, n], d));
                }
            }
            Op::AddBias(a, bias) => {
                self.accumulate(adj, *a, g.clone());
                if self.requires_grad(*bias) {
                    let n = g.cols();
                    let mut gb = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (acc, x) in gb.iter_mut().zip(row) {
                            *acc += x;
                        }
                    }
                    self.accumulate(adj, *bias, Tensor::vector(gb));
                }
            }
            Op::MulRows(a, s) => {
                let (av, sv) = (self.value(*a), self.value(*s));
                let n = av.cols();
                if self.requires_grad(*a) {
                    let mut ga = g.data().to_vec();
                    for (row, &k) in ga.chunks_mut(n).zip(sv.data()) {
                        for x in row {
                            *x *= k;
                        }
                    }
                    self.accumulate(adj, *a, tensor(av.shape().to_vec(), ga));
                }
                if self.requires_grad(*s) {
                    let gs = g
                        .data()
                        .chunks(n)
                        .zip(av.data().chunks(n))
                        .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                        .collect();
                    self.accumulate(adj, *s, Tensor::vector(gs));
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let (m, w) = (self.value(p).rows(), self.value(p).cols());
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(m * w);
                        for row in g.data().chunks(total) {
                            d.extend_from_slice(&row[offset..offset + w]);
                        }
                        self.accumulate(adj, p, tensor(vec![m, w], d));
                    }
                    offset += w;
                }
            }
            Op::Sinusoid { t, freqs, order } => {
                let deriv = sinusoid_values(self.value(*t).data(), freqs, order + 1);
                let w = deriv.cols();
                let gt = g
                    .data()
                    .chunks(w)
                    .zip(deriv.data().chunks(w))
                    .map(|(gr, dr)| gr.iter().zip(dr).map(|(x, y)| x * y).sum())
                    .collect();
                self.accumulate(adj, *t, Tensor::vector(gt));
            }
            Op::SumAll(a) => {
                let s = g.item();
                self.accumulate(adj, *a, Tensor::full(self.shape(*a), s));
            }
            Op::SgLambda { z, lambda } => {
                if *lambda > 0.0 {
                    let l = *lambda;
                    self.accumulate(adj, *z, g.map(|x| l * x));
                }
            }
        }
    }
}

fn tensor(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).expect("adjoint shape is consistent by construction")
}

fn apply_binary(kind: BinaryKind, x: f64, y: f64) -> f64 {
    match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
        BinaryKind::Div => x / y,
    }
}

fn binary_name(kind: BinaryKind) -> &'static str {
    match kind {
        BinaryKind::Add => "add",
        BinaryKind::Sub => "sub",
        BinaryKind::Mul => "mul",
        BinaryKind::Div => "div",
    }
}

/// Elementwise `f(g, other)` where `other` may be a broadcast scalar.
fn broadcast_zip(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if other.shape() == g.shape() {
        g.zip_map(other, f)
    } else {
        let y = other.item();
        g.map(|x| f(x, y))
    }
}

/// Values of the `order`-th derivative of the (sin, cos) embedding.
///
/// d/dt sin(ωt + φ) = ω sin(ωt + φ + π/2), so order `k` is
/// `ω^k (sin, cos)(ωt + kπ/2)`.
pub(crate) fn sinusoid_values(t: &[f64], freqs: &[f64], order: u32) -> Tensor {
    let k = freqs.len();
    let mut data = Vec::with_capacity(t.len() * 2 * k);
    for &ti in t {
        for &w in freqs {
            let (s, c) = (w * ti).sin_cos();
            let amp = w.powi(order as i32);
            let (s, c) = match order % 4 {
                0 => (s, c),
                1 => (c, -s),
                2 => (-s, -c),
                _ => (-c, s),
            };
            data.push(amp * s);
            data.push(amp * c);
        }
    }
    tensor(vec![t.len(), 2 * k], data)
}

/// Gradients of every leaf reachable from the loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<(Var, Tensor)>,
}

impl Gradients {
    /// Gradient for `v`; `None` when `v` is not a leaf of the record.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads
            .binary_search_by_key(&v, |(var, _)| *var)
            .ok()
            .map(|i| &self.grads[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(v, g)| (*v, g))
    }

    /// Gradients for `vars`, in order. Non-leaves yield `None`.
    pub fn collect(&self, vars: &[Var]) -> Vec<Option<Tensor>> {
        vars.iter().map(|&v| self.get(v).cloned()).collect()
    }
}
