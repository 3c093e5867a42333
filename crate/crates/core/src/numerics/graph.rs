//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every primitive applied during one forward pass.
//! [`Graph::backward`] then walks the tape once in reverse insertion order,
//! accumulating gradients into every node that depends on a leaf with
//! `requires_grad` set.
//!
//! Operations never fail on non-finite results. The first node producing a
//! NaN or infinity is remembered and reported by [`Graph::check`] and
//! [`Graph::backward`], naming the primitive responsible.

use std::borrow::Cow;

use super::tensor::{gemm, Tensor};
use crate::error::{HiclError, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, a_t: bool, b_t: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Expm1(Var),
    Log(Var),
    Log1p(Var),
    Sqrt(Var),
    Sum(Var),
    SumRows(Var),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SoftmaxRows(Var),
    Gelu(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Exp(_) => "exp",
            Op::Expm1(_) => "expm1",
            Op::Log(_) => "log",
            Op::Log1p(_) => "log1p",
            Op::Sqrt(_) => "sqrt",
            Op::Sum(_) => "sum",
            Op::SumRows(_) => "sum_rows",
            Op::Transpose(_) => "transpose",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatRows(_) => "concat_rows",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::Gelu(_) => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    nonfinite: Option<(usize, &'static str)>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the output with respect to `var`, or `None` when `var`
    /// does not depend on any differentiable leaf.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn broadcast_dims(op: &'static str, a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("{op}: cannot broadcast {a:?} with {b:?}");
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

/// Sum a `(r, c)` gradient down to the broadcast source dims.
fn reduce_to(grad: &[f64], (r, c): (usize, usize), target: &Tensor) -> Tensor {
    let (tr, tc) = target.dims2();
    if (tr, tc) == (r, c) {
        return Tensor::from_parts(target.shape().to_vec(), grad.to_vec());
    }
    let mut out = vec![0.0; tr * tc];
    for i in 0..r {
        let oi = if tr == 1 { 0 } else { i };
        for j in 0..c {
            let oj = if tc == 1 { 0 } else { j };
            out[oi * tc + oj] += grad[i * c + j];
        }
    }
    Tensor::from_parts(target.shape().to_vec(), out)
}

fn zip_broadcast(
    a: &Tensor,
    b: &Tensor,
    (r, c): (usize, usize),
    f: impl Fn(f64, f64) -> f64,
) -> Vec<f64> {
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let (ad, bd) = (a.data(), b.data());
    if (ar, ac) == (br, bc) {
        return ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect();
    }
    let mut out = Vec::with_capacity(r * c);
    if (ar, ac) == (r, c) && br == 1 && bc == c {
        for row in ad.chunks_exact(c.max(1)) {
            out.extend(row.iter().zip(bd).map(|(&x, &y)| f(x, y)));
        }
        return out;
    }
    for i in 0..r {
        let ai = if ar == 1 { 0 } else { i * ac };
        let bi = if br == 1 { 0 } else { i * bc };
        for j in 0..c {
            let x = ad[ai + if ac == 1 { 0 } else { j }];
            let y = bd[bi + if bc == 1 { 0 } else { j }];
            out.push(f(x, y));
        }
    }
    out
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

// 0.5 x (1 + tanh u) == x * sigmoid(2u); one exp is much cheaper than tanh.
fn gelu(x: f64) -> f64 {
    x / (1.0 + (-2.0 * GELU_K * (x + GELU_C * x * x * x)).exp())
}

fn gelu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-2.0 * GELU_K * (x + GELU_C * x * x * x)).exp());
    s + 2.0 * x * s * (1.0 - s) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), nonfinite: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, needs_grad: bool) -> Var {
        let id = self.nodes.len();
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some((id, op.name()));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Var(id)
    }

    fn unary(&mut self, x: Var, value: Tensor, op: Op) -> Var {
        let ng = self.nodes[x.0].needs_grad;
        self.push(Cow::Owned(value), op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(Cow::Owned(value), op, ng)
    }

    /// Record a borrowed leaf. Differentiable iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, t.requires_grad)
    }

    /// Record a borrowed leaf that never receives gradient.
    pub fn frozen(&mut self, t: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    pub fn leaf_owned(&mut self, t: Tensor) -> Var {
        let ng = t.requires_grad;
        self.push(Cow::Owned(t), Op::Leaf, ng)
    }

    /// Record a leaf that never receives gradient, regardless of its flag.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Error if any recorded node produced a non-finite value.
    pub fn check(&self) -> Result<()> {
        match self.nonfinite {
            Some((node, op)) => Err(HiclError::NonFinite { op, node }),
            None => Ok(()),
        }
    }

    fn matmul_impl(&mut self, a: Var, b: Var, a_t: bool, b_t: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let (ar, ac) = av.dims2();
        let (br, bc) = bv.dims2();
        let (m, k) = if a_t { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if b_t { (bc, br) } else { (br, bc) };
        assert_eq!(k, k2, "matmul: inner dims {:?} x {:?} (a_t={a_t}, b_t={b_t})", av.shape(), bv.shape());
        let out = gemm(av.data(), (m, k), a_t, bv.data(), n, b_t);
        self.binary(a, b, Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b, a_t, b_t })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false, false)
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false, true)
    }

    fn elementwise(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let dims = broadcast_dims(name, av.dims2(), bv.dims2());
        let data = zip_broadcast(av, bv, dims, f);
        let shape = if av.dims2() == dims {
            av.shape().to_vec()
        } else if bv.dims2() == dims {
            bv.shape().to_vec()
        } else {
            vec![dims.0, dims.1]
        };
        Tensor::from_parts(shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.elementwise(a, b, "add", |x, y| x + y);
        self.binary(a, b, t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.elementwise(a, b, "sub", |x, y| x - y);
        self.binary(a, b, t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.elementwise(a, b, "mul", |x, y| x * y);
        self.binary(a, b, t, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let t = self.elementwise(a, b, "div", |x, y| x / y);
        self.binary(a, b, t, Op::Div(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x);
        let t = Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|a| a * c).collect());
        self.unary(x, t, Op::Scale(x, c))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(x);
        Tensor::from_parts(v.shape().to_vec(), v.data().iter().map(|&a| f(a)).collect())
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::exp);
        self.unary(x, t, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::ln);
        self.unary(x, t, Op::Log(x))
    }

    /// `exp(x) - 1`, accurate near zero.
    pub fn expm1(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::exp_m1);
        self.unary(x, t, Op::Expm1(x))
    }

    /// `ln(1 + x)`, accurate near zero.
    pub fn log1p(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::ln_1p);
        self.unary(x, t, Op::Log1p(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let t = self.map(x, f64::sqrt);
        self.unary(x, t, Op::Sqrt(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.map(x, gelu);
        self.unary(x, t, Op::Gelu(x))
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.unary(x, Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Row sums of an `r x c` matrix, giving `r x 1`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (r, c) = v.dims2();
        let data = (0..r).map(|i| v.data()[i * c..(i + 1) * c].iter().sum()).collect();
        self.unary(x, Tensor::from_parts(vec![r, 1], data), Op::SumRows(x))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (r, c) = v.dims2();
        let d = v.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.unary(x, Tensor::from_parts(vec![c, r], out), Op::Transpose(x))
    }

    /// Select rows by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let v = self.value(x);
        let (r, c) = v.dims2();
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            assert!(i < r, "gather_rows: row {i} out of range for {r} rows");
            out.extend_from_slice(v.row(i));
        }
        self.unary(x, Tensor::from_parts(vec![rows.len(), c], out), Op::GatherRows(x, rows.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let c = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        let mut ng = false;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), c, "concat_rows: column mismatch");
            rows += v.rows();
            out.extend_from_slice(v.data());
            ng |= self.nodes[p.0].needs_grad;
        }
        self.push(Cow::Owned(Tensor::from_parts(vec![rows, c], out)), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (r, c) = v.dims2();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(c.max(1)).take(r) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            for e in row.iter_mut() {
                *e /= s;
            }
        }
        self.unary(x, Tensor::from_parts(v.shape().to_vec(), out), Op::SoftmaxRows(x))
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let v = self.value(x);
        let (r, c) = v.dims2();
        let mut out = v.data().to_vec();
        let mut inv_std = Vec::with_capacity(r);
        for row in out.chunks_mut(c.max(1)).take(r) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for e in row.iter_mut() {
                *e = (*e - mean) * is;
            }
            inv_std.push(is);
        }
        self.unary(x, Tensor::from_parts(v.shape().to_vec(), out), Op::LayerNorm { x, inv_std })
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        self.check()?;
        let out = self.value(output);
        if out.numel() != 1 {
            return Err(HiclError::shape("backward", format!("output must be scalar, got shape {:?}", out.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::from_parts(out.shape().to_vec(), vec![1.0]));

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            if !g.is_finite() {
                return Err(HiclError::NonFinite { op: node.op.name(), node: id });
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, a_t, b_t } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, n) = y.dims2();
                let k = if *a_t { av.rows() } else { av.cols() };
                if self.nodes[a.0].needs_grad {
                    // d op(A) = G op(B)^T
                    let ga = if *a_t {
                        gemm(bv.data(), (k, n), *b_t, gd, m, true)
                    } else {
                        gemm(gd, (m, n), false, bv.data(), k, !*b_t)
                    };
                    self.accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), ga));
                }
                if self.nodes[b.0].needs_grad {
                    // d op(B) = op(A)^T G
                    let gb = if *b_t {
                        gemm(gd, (n, m), true, av.data(), k, *a_t)
                    } else {
                        gemm(av.data(), (k, m), !*a_t, gd, n, false)
                    };
                    self.accumulate(grads, *b, Tensor::from_parts(bv.shape().to_vec(), gb));
                }
            }
            Op::Add(a, b) => {
                let dims = y.dims2();
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, reduce_to(gd, dims, av));
                self.accumulate(grads, *b, reduce_to(gd, dims, bv));
            }
            Op::Sub(a, b) => {
                let dims = y.dims2();
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, reduce_to(gd, dims, av));
                let neg: Vec<f64> = gd.iter().map(|v| -v).collect();
                self.accumulate(grads, *b, reduce_to(&neg, dims, bv));
            }
            Op::Mul(a, b) => {
                let dims = y.dims2();
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    let d = zip_broadcast(g, bv, dims, |x, y| x * y);
                    self.accumulate(grads, *a, reduce_to(&d, dims, av));
                }
                if self.nodes[b.0].needs_grad {
                    let d = zip_broadcast(g, av, dims, |x, y| x * y);
                    self.accumulate(grads, *b, reduce_to(&d, dims, bv));
                }
            }
            Op::Div(a, b) => {
                let dims = y.dims2();
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    let d = zip_broadcast(g, bv, dims, |x, y| x / y);
                    self.accumulate(grads, *a, reduce_to(&d, dims, av));
                }
                if self.nodes[b.0].needs_grad {
                    // d(a/b)/db = -(a/b) / b = -y / b
                    let gy: Vec<f64> = gd.iter().zip(y.data()).map(|(g, y)| -g * y).collect();
                    let gy = Tensor::from_parts(y.shape().to_vec(), gy);
                    let d = zip_broadcast(&gy, bv, dims, |x, y| x / y);
                    self.accumulate(grads, *b, reduce_to(&d, dims, bv));
                }
            }
            Op::Scale(x, c) => {
                let d = gd.iter().map(|v| v * c).collect();
                self.accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Exp(x) => {
                let d = gd.iter().zip(y.data()).map(|(g, y)| g * y).collect();
                self.accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Log(x) => {
                let xv = self.value(*x);
                let d = gd.iter().zip(xv.data()).map(|(g, x)| g / x).collect();
                self.accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Expm1(x) => {
                let d = gd.iter().zip(y.data()).map(|(g, y)| g * (y + 1.0)).collect();
                self.accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Log1p(x) => {
                let xv = self.value(*x);
                let d = gd.iter().zip(xv.data()).map(|(g, x)| g / (1.0 + x)).collect();
                self.accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Sqrt(x) => {
                let d = gd.iter().zip(y.data()).map(|(g, y)| g * 0.5 / y).collect();
                self.accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let d = gd.iter().zip(xv.data()).map(|(g, &x)| g * gelu_grad(x)).collect();
                self.accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::filled(xv.shape(), gd[0]));
            }
            Op::SumRows(x) => {
                let xv = self.value(*x);
                let (r, c) = xv.dims2();
                let mut d = Vec::with_capacity(r * c);
                for &gi in gd.iter().take(r) {
                    d.extend(std::iter::repeat(gi).take(c));
                }
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), d));
            }
            Op::Transpose(x) => {
                let (r, c) = y.dims2();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[j * r + i] = gd[i * c + j];
                    }
                }
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), d));
            }
            Op::GatherRows(x, rows) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut d = vec![0.0; xv.numel()];
                for (k, &i) in rows.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += gd[k * c + j];
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(xv.shape().to_vec(), d));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let n = pv.numel();
                    self.accumulate(grads, p, Tensor::from_parts(pv.shape().to_vec(), gd[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::SoftmaxRows(x) => {
                let (r, c) = y.dims2();
                let yd = y.data();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let dot: f64 = gd[row.clone()].iter().zip(&yd[row.clone()]).map(|(g, y)| g * y).sum();
                    for j in row {
                        d[j] = yd[j] * (gd[j] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), d));
            }
            Op::LayerNorm { x, inv_std } => {
                let (r, c) = y.dims2();
                let yd = y.data();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let mean_g = gd[row.clone()].iter().sum::<f64>() / c as f64;
                    let mean_gy =
                        gd[row.clone()].iter().zip(&yd[row.clone()]).map(|(g, y)| g * y).sum::<f64>() / c as f64;
                    for j in row {
                        d[j] = inv_std[i] * (gd[j] - mean_g - yd[j] * mean_gy);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), d));
            }
        }
    }
}
