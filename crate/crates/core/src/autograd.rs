//! A small reverse-mode tape over [`Matrix`] values.
//!
//! Every forward pass records its operations on a [`Tape`]. Backbone weights
//! and inputs enter as constants, trainable tensors as parameters; only nodes
//! that (transitively) depend on a parameter take part in the backward sweep.
//! Losses are evaluated outside the tape and handed back as gradient seeds on
//! the nodes they consumed (see [`Tape::backward`]).

use crate::tensor::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normalized: Matrix,
        inv_std: Vec<f64>,
    },
    QuickGelu(Var),
    SoftmaxRows(Var),
    Slice {
        x: Var,
        row0: usize,
        col0: usize,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

const QUICK_GELU_SLOPE: f64 = 1.702;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMulNt(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Adds the `1 x n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.rows(), 1, "add_row expects a single bias row");
        assert_eq!(b.cols(), self.value(a).cols());
        let mut value = self.value(a).clone();
        let bias_row = b.row(0).to_vec();
        for r in 0..value.rows() {
            for (v, bv) in value.row_mut(r).iter_mut().zip(&bias_row) {
                *v += bv;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(value, Op::AddRow(a, bias), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scaled(s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (`1 x n` each).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut normalized = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for (o, v) in normalized.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
        }
        let g = self.value(gamma).row(0).to_vec();
        let b = self.value(beta).row(0).to_vec();
        let mut value = normalized.clone();
        for r in 0..rows {
            for ((o, gv), bv) in value.row_mut(r).iter_mut().zip(&g).zip(&b) {
                *o = *o * gv + bv;
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        )
    }

    /// `x · σ(1.702 x)`
    pub fn quick_gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * sigmoid(QUICK_GELU_SLOPE * v));
        let rg = self.rg(x);
        self.push(value, Op::QuickGelu(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = xv.clone();
        for r in 0..value.rows() {
            softmax_in_place(value.row_mut(r));
        }
        let rg = self.rg(x);
        self.push(value, Op::SoftmaxRows(x), rg)
    }

    /// Sub-block `rows x cols` starting at `(row0, col0)`.
    pub fn slice(&mut self, x: Var, row0: usize, rows: usize, col0: usize, cols: usize) -> Var {
        let xv = self.value(x);
        assert!(
            row0 + rows <= xv.rows() && col0 + cols <= xv.cols(),
            "slice out of range"
        );
        let value = Matrix::from_fn(rows, cols, |r, c| xv.get(row0 + r, col0 + c));
        let rg = self.rg(x);
        self.push(value, Op::Slice { x, row0, col0 }, rg)
    }

    pub fn slice_rows(&mut self, x: Var, row0: usize, rows: usize) -> Var {
        let cols = self.value(x).cols();
        self.slice(x, row0, rows, 0, cols)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(v.as_slice());
            rows += v.rows();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                value.row_mut(r)[c0..c0 + v.cols()].copy_from_slice(v.row(r));
            }
            c0 += v.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), rg)
    }

    /// Rows of `x` at `indices` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Var {
        let xv = self.value(x);
        let mut data = Vec::with_capacity(indices.len() * xv.cols());
        for &i in indices {
            data.extend_from_slice(xv.row(i));
        }
        let value = Matrix::from_vec(indices.len(), xv.cols(), data);
        let rg = self.rg(x);
        self.push(value, Op::GatherRows(x, indices.to_vec()), rg)
    }

    /// Reverse sweep from the given `(node, dL/dnode)` seeds.
    pub fn backward(&self, seeds: &[(Var, Matrix)]) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed shape mismatch");
            if self.rg(*v) {
                accumulate(&mut grads, *v, g.clone());
            }
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.matmul_nt(self.value(*b)));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, self.value(*a).matmul_tn(&g));
                    }
                }
                Op::MatMulNt(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.matmul(self.value(*b)));
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g.matmul_tn(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.rg(*bias) {
                        accumulate(&mut grads, *bias, column_sums(&g));
                    }
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scaled(*s)),
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    normalized,
                    inv_std,
                } => {
                    if self.rg(*gamma) {
                        let mut gg = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for ((o, gv), nv) in gg.row_mut(0).iter_mut().zip(g.row(r)).zip(normalized.row(r)) {
                                *o += gv * nv;
                            }
                        }
                        accumulate(&mut grads, *gamma, gg);
                    }
                    if self.rg(*beta) {
                        accumulate(&mut grads, *beta, column_sums(&g));
                    }
                    if self.rg(*x) {
                        let gamma_row = self.value(*gamma).row(0);
                        let n = g.cols() as f64;
                        let mut gx = Matrix::zeros(g.rows(), g.cols());
                        for (r, &inv) in inv_std.iter().enumerate().take(g.rows()) {
                            let gn: Vec<f64> = g.row(r).iter().zip(gamma_row).map(|(a, b)| a * b).collect();
                            let xh = normalized.row(r);
                            let mean_gn = gn.iter().sum::<f64>() / n;
                            let mean_gnx = gn.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
                            for ((o, gv), xv) in gx.row_mut(r).iter_mut().zip(&gn).zip(xh) {
                                *o = inv * (gv - mean_gn - xv * mean_gnx);
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::QuickGelu(x) => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (o, &v) in gx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        let s = sigmoid(QUICK_GELU_SLOPE * v);
                        *o *= s + QUICK_GELU_SLOPE * v * s * (1.0 - s);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let y = &node.value;
                    let mut gx = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - inner);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Slice { x, row0, col0 } => {
                    let (xr, xc) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(xr, xc);
                    for r in 0..g.rows() {
                        gx.row_mut(row0 + r)[*col0..*col0 + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for p in parts {
                        let rows = self.value(*p).rows();
                        if self.rg(*p) {
                            accumulate(&mut grads, *p, g.slice_rows(r0, r0 + rows));
                        }
                        r0 += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let cols = self.value(*p).cols();
                        if self.rg(*p) {
                            let part = Matrix::from_fn(g.rows(), cols, |r, c| g.get(r, c0 + c));
                            accumulate(&mut grads, *p, part);
                        }
                        c0 += cols;
                    }
                }
                Op::GatherRows(x, indices) => {
                    let (xr, xc) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(xr, xc);
                    for (r, &i) in indices.iter().enumerate() {
                        for (o, gv) in gx.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.row_mut(0).iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Gradients of leaf nodes after [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }
}
