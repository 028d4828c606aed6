//! Pre-LN transformer blocks shared by the image and text towers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::tensor::Matrix;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normal(0, std) truncated to ±2 std by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Matrix {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Matrix::from_fn(rows, cols, |_, _| loop {
        let z: f64 = normal.sample(rng);
        if z.abs() <= 2.0 {
            break z * std;
        }
    })
}

/// Visitor over named parameter tensors, used for hashing and counting.
pub trait ParamVisitor {
    fn visit(&mut self, name: &str, value: &Matrix);
}

impl<F: FnMut(&str, &Matrix)> ParamVisitor for F {
    fn visit(&mut self, name: &str, value: &Matrix) {
        self(name, value)
    }
}

/// `y = x · weight + bias`, weight stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Option<Matrix>,
}

impl Linear {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, std: f64, bias: bool) -> Self {
        Self {
            weight: truncated_normal(rng, fan_in, fan_out, std),
            bias: bias.then(|| Matrix::zeros(1, fan_out)),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLinear {
        BoundLinear {
            weight: tape.constant(self.weight.clone()),
            bias: self.bias.as_ref().map(|b| tape.constant(b.clone())),
        }
    }

    fn visit(&self, prefix: &str, v: &mut dyn ParamVisitor) {
        v.visit(&format!("{prefix}.weight"), &self.weight);
        if let Some(b) = &self.bias {
            v.visit(&format!("{prefix}.bias"), b);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Option<Var>,
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let y = tape.matmul(x, self.weight);
        match self.bias {
            Some(b) => tape.add_row(y, b),
            None => y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Matrix::from_vec(1, dim, vec![1.0; dim]),
            beta: Matrix::zeros(1, dim),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundLayerNorm {
        BoundLayerNorm {
            gamma: tape.constant(self.gamma.clone()),
            beta: tape.constant(self.beta.clone()),
        }
    }

    fn visit(&self, prefix: &str, v: &mut dyn ParamVisitor) {
        v.visit(&format!("{prefix}.gamma"), &self.gamma);
        v.visit(&format!("{prefix}.beta"), &self.beta);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLayerNorm {
    pub gamma: Var,
    pub beta: Var,
}

impl BoundLayerNorm {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        tape.layer_norm(x, self.gamma, self.beta, LAYER_NORM_EPS)
    }
}

/// `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1: LayerNorm,
    pub qkv: Linear,
    pub out: Linear,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub num_heads: usize,
}

impl Block {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, dim: usize, mlp_dim: usize, num_heads: usize, std: f64) -> Self {
        Self {
            ln1: LayerNorm::new(dim),
            qkv: Linear::init(rng, dim, 3 * dim, std, true),
            out: Linear::init(rng, dim, dim, std, true),
            ln2: LayerNorm::new(dim),
            fc1: Linear::init(rng, dim, mlp_dim, std, true),
            fc2: Linear::init(rng, mlp_dim, dim, std, true),
            num_heads,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundBlock {
        BoundBlock {
            ln1: self.ln1.bind(tape),
            qkv: self.qkv.bind(tape),
            out: self.out.bind(tape),
            ln2: self.ln2.bind(tape),
            fc1: self.fc1.bind(tape),
            fc2: self.fc2.bind(tape),
            num_heads: self.num_heads,
        }
    }

    pub fn visit(&self, prefix: &str, v: &mut dyn ParamVisitor) {
        self.ln1.visit(&format!("{prefix}.ln1"), v);
        self.qkv.visit(&format!("{prefix}.qkv"), v);
        self.out.visit(&format!("{prefix}.out"), v);
        self.ln2.visit(&format!("{prefix}.ln2"), v);
        self.fc1.visit(&format!("{prefix}.fc1"), v);
        self.fc2.visit(&format!("{prefix}.fc2"), v);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundBlock {
    pub ln1: BoundLayerNorm,
    pub qkv: BoundLinear,
    pub out: BoundLinear,
    pub ln2: BoundLayerNorm,
    pub fc1: BoundLinear,
    pub fc2: BoundLinear,
    pub num_heads: usize,
}

#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub output: Var,
    /// Post-softmax attention, one `S x S` matrix per head (row = query).
    pub probs: Vec<Var>,
}

impl BoundBlock {
    /// `mask` is an additive `S x S` constant (use `-inf`-like values to block).
    pub fn forward(&self, tape: &mut Tape, x: Var, mask: Option<Var>) -> BlockOutput {
        let (seq, dim) = tape.value(x).shape();
        let head_dim = dim / self.num_heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let h = self.ln1.forward(tape, x);
        let qkv = self.qkv.forward(tape, h);
        let mut contexts = Vec::with_capacity(self.num_heads);
        let mut probs = Vec::with_capacity(self.num_heads);
        for head in 0..self.num_heads {
            let q = tape.slice(qkv, 0, seq, head * head_dim, head_dim);
            let k = tape.slice(qkv, 0, seq, dim + head * head_dim, head_dim);
            let v = tape.slice(qkv, 0, seq, 2 * dim + head * head_dim, head_dim);
            let scores = tape.matmul_nt(q, k);
            let mut scores = tape.scale(scores, scale);
            if let Some(m) = mask {
                scores = tape.add(scores, m);
            }
            let p = tape.softmax_rows(scores);
            contexts.push(tape.matmul(p, v));
            probs.push(p);
        }
        let context = if contexts.len() == 1 {
            contexts[0]
        } else {
            tape.concat_cols(&contexts)
        };
        let attn = self.out.forward(tape, context);
        let x = tape.add(x, attn);

        let h = self.ln2.forward(tape, x);
        let h = self.fc1.forward(tape, h);
        let h = tape.quick_gelu(h);
        let h = self.fc2.forward(tape, h);
        let output = tape.add(x, h);
        BlockOutput { output, probs }
    }
}

/// Additive causal mask: position `i` may attend to `j <= i` only.
pub fn causal_mask(seq: usize) -> Matrix {
    Matrix::from_fn(seq, seq, |i, j| if j <= i { 0.0 } else { -1e9 })
}
