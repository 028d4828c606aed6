//! ViT-style image tower with prompt-injection slots.
//!
//! Token layout entering every layer is `[class, action prompt?, patches.., temporal..]`.
//! Temporal tokens live for exactly one layer: they are appended to a layer's
//! input and their outputs are dropped before the next layer.

use rand::Rng;

use super::config::EncoderConfig;
use super::frame::FrameTensor;
use super::layers::{truncated_normal, Block, BoundBlock, BoundLayerNorm, LayerNorm, ParamVisitor};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageEncoder {
    pub config: EncoderConfig,
    /// `patch_dim x D`, no bias.
    pub patch_proj: Matrix,
    pub class_embedding: Matrix,
    /// `(1 + N_p) x D`; row 0 belongs to the class token.
    pub positional: Matrix,
    pub ln_pre: LayerNorm,
    pub blocks: Vec<Block>,
    pub ln_post: LayerNorm,
    /// `D x D` output projection.
    pub proj: Matrix,
}

impl ImageEncoder {
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        let d = config.embed_dim;
        let std = config.init_std;
        Self {
            config: config.clone(),
            patch_proj: truncated_normal(rng, config.patch_dim(), d, std),
            class_embedding: truncated_normal(rng, 1, d, std),
            positional: truncated_normal(rng, 1 + config.num_patches(), d, std),
            ln_pre: LayerNorm::new(d),
            blocks: (0..config.num_layers)
                .map(|_| Block::init(rng, d, config.mlp_dim(), config.num_heads, std))
                .collect(),
            ln_post: LayerNorm::new(d),
            proj: truncated_normal(rng, d, d, std),
        }
    }

    pub fn visit(&self, v: &mut dyn ParamVisitor) {
        v.visit("image.patch_proj", &self.patch_proj);
        v.visit("image.class_embedding", &self.class_embedding);
        v.visit("image.positional", &self.positional);
        v.visit("image.ln_pre.gamma", &self.ln_pre.gamma);
        v.visit("image.ln_pre.beta", &self.ln_pre.beta);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("image.blocks.{i}"), v);
        }
        v.visit("image.ln_post.gamma", &self.ln_post.gamma);
        v.visit("image.ln_post.beta", &self.ln_post.beta);
        v.visit("image.proj", &self.proj);
    }

    /// Row `i` is the projection of the `i`-th patch (row-major patch order)
    /// plus its positional embedding.
    pub fn embed_patches(&self, frame: &FrameTensor) -> Result<Matrix> {
        let cfg = &self.config;
        if frame.channels() != cfg.channels || frame.size() != cfg.image_size {
            return Err(Error::config(format!(
                "frame is {}x{}x{}, encoder expects {}x{}x{}",
                frame.channels(),
                frame.size(),
                frame.size(),
                cfg.channels,
                cfg.image_size,
                cfg.image_size
            )));
        }
        let patches = patchify(frame, cfg.patch_size);
        let mut out = patches.matmul(&self.patch_proj);
        for i in 0..out.rows() {
            for (o, p) in out.row_mut(i).iter_mut().zip(self.positional.row(i + 1)) {
                *o += p;
            }
        }
        Ok(out)
    }

    /// `[x_0; E_0]` after the pre-transformer layer norm.
    pub fn initial_tokens(&self, frame: &FrameTensor) -> Result<Matrix> {
        let patches = self.embed_patches(frame)?;
        let d = self.config.embed_dim;
        let mut raw = Matrix::zeros(1 + patches.rows(), d);
        for c in 0..d {
            raw.set(0, c, self.class_embedding.get(0, c) + self.positional.get(0, c));
        }
        for r in 0..patches.rows() {
            raw.row_mut(r + 1).copy_from_slice(patches.row(r));
        }
        let mut tape = Tape::new();
        let x = tape.constant(raw);
        let ln = self.ln_pre.bind(&mut tape);
        let y = ln.forward(&mut tape, x);
        Ok(tape.value(y).clone())
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundImageEncoder {
        BoundImageEncoder {
            blocks: self.blocks.iter().map(|b| b.bind(tape)).collect(),
            ln_post: self.ln_post.bind(tape),
            proj: tape.constant(self.proj.clone()),
            num_patches: self.config.num_patches(),
            embed_dim: self.config.embed_dim,
        }
    }

    /// Single-frame forward with explicitly supplied prompts.
    pub fn forward(&self, frame: &FrameTensor, prompts: &PromptPack) -> Result<ImageForward> {
        let d = self.config.embed_dim;
        let n_layers = self.config.num_layers;
        prompts.validate(d, n_layers)?;

        let tokens = self.initial_tokens(frame)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let tokens = tape.constant(tokens);
        let action = match &prompts.action {
            None => BoundAction::None,
            Some(ActionPrompt::Video(p)) => BoundAction::Video(tape.constant(Matrix::row_vector(p))),
            Some(ActionPrompt::Verb(ps)) => {
                BoundAction::Verb(ps.iter().map(|p| tape.constant(Matrix::row_vector(p))).collect())
            }
        };
        let mut state = bound.start(&mut tape, tokens, &action);
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut attention = AttentionStack::default();
        for layer in 0..n_layers {
            let temporal = if layer == 0 {
                None
            } else {
                prompts
                    .temporal
                    .get(layer - 1)
                    .and_then(Option::as_ref)
                    .map(|m| tape.constant(m.clone()))
            };
            let step = bound.layer(&mut tape, layer, state, &action, temporal);
            layer_inputs.push(LayerState::from_values(
                tape.value(step.input).clone(),
                action.is_some(),
                self.config.num_patches(),
            ));
            if let (Some(row), Some(full)) = (step.attention, step.full_attention) {
                attention.push(&tape, row, full);
            }
            state = step.output;
        }
        let feature = bound.feature(&mut tape, state);
        Ok(ImageForward {
            feature: tape.value(feature).row_vec(0),
            final_state: LayerState::from_values(
                tape.value(state).clone(),
                action.is_some(),
                self.config.num_patches(),
            ),
            layer_inputs,
            attention,
        })
    }
}

/// Splits a frame into `N_p x (C·P·P)` patch vectors, each flattened as
/// channel, then row, then column inside the patch.
pub fn patchify(frame: &FrameTensor, patch: usize) -> Matrix {
    let grid = frame.size() / patch;
    let c = frame.channels();
    Matrix::from_fn(grid * grid, c * patch * patch, |i, j| {
        let (py, px) = (i / grid, i % grid);
        let ch = j / (patch * patch);
        let rem = j % (patch * patch);
        frame.get(ch, py * patch + rem / patch, px * patch + rem % patch)
    })
}

/// Action-aware prompt stream; at most one per forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionPrompt {
    /// `p_vid`, injected once before the first layer.
    Video(Vec<f64>),
    /// `p_veb^l` for every layer; each replaces the previous layer's prompt output.
    Verb(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptPack {
    pub action: Option<ActionPrompt>,
    /// `temporal[l]` is produced at layer `l` (0-based) and consumed by layer `l + 1`.
    pub temporal: Vec<Option<Matrix>>,
}

impl PromptPack {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn video(p: Vec<f64>) -> Self {
        Self {
            action: Some(ActionPrompt::Video(p)),
            temporal: Vec::new(),
        }
    }

    pub fn verb(ps: Vec<Vec<f64>>) -> Self {
        Self {
            action: Some(ActionPrompt::Verb(ps)),
            temporal: Vec::new(),
        }
    }

    pub fn with_temporal(mut self, temporal: Vec<Option<Matrix>>) -> Self {
        self.temporal = temporal;
        self
    }

    pub fn validate(&self, dim: usize, num_layers: usize) -> Result<()> {
        match &self.action {
            Some(ActionPrompt::Video(p)) if p.len() != dim => {
                return Err(Error::config(format!(
                    "video prompt has dim {}, expected {dim}",
                    p.len()
                )))
            }
            Some(ActionPrompt::Verb(ps)) => {
                if ps.len() != num_layers {
                    return Err(Error::config(format!(
                        "{} verb prompts for {num_layers} layers",
                        ps.len()
                    )));
                }
                if let Some(p) = ps.iter().find(|p| p.len() != dim) {
                    return Err(Error::config(format!(
                        "verb prompt has dim {}, expected {dim}",
                        p.len()
                    )));
                }
            }
            _ => {}
        }
        for (l, t) in self.temporal.iter().enumerate() {
            let Some(t) = t else { continue };
            if l + 1 >= num_layers {
                return Err(Error::config(format!(
                    "temporal prompt produced at layer {} has no consuming layer",
                    l + 1
                )));
            }
            if t.cols() != dim || t.rows() == 0 {
                return Err(Error::config(format!(
                    "temporal prompt is {}x{}, expected kx{dim}",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum BoundAction {
    None,
    Video(Var),
    Verb(Vec<Var>),
}

impl BoundAction {
    pub fn is_some(&self) -> bool {
        !matches!(self, BoundAction::None)
    }
}

#[derive(Debug, Clone)]
pub struct BoundImageEncoder {
    pub blocks: Vec<BoundBlock>,
    pub ln_post: BoundLayerNorm,
    pub proj: Var,
    pub num_patches: usize,
    pub embed_dim: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerStep {
    /// Full sequence that entered the layer (temporal tokens included).
    pub input: Var,
    /// Layer output with temporal tokens dropped.
    pub output: Var,
    /// Head-averaged prompt→patch attention, `1 x N_p`.
    pub attention: Option<Var>,
    /// Same row over the whole sequence (for excluded-mass bookkeeping).
    pub full_attention: Option<Var>,
}

impl BoundImageEncoder {
    /// `[x_0, p, E_0]` (or `[x_0, E_0]` without an action prompt).
    pub fn start(&self, tape: &mut Tape, tokens: Var, action: &BoundAction) -> Var {
        let prompt = match action {
            BoundAction::None => return tokens,
            BoundAction::Video(p) => *p,
            BoundAction::Verb(ps) => ps[0],
        };
        let class = tape.slice_rows(tokens, 0, 1);
        let patches = tape.slice_rows(tokens, 1, self.num_patches);
        tape.concat_rows(&[class, prompt, patches])
    }

    pub fn patch_offset(&self, action: &BoundAction) -> usize {
        if action.is_some() {
            2
        } else {
            1
        }
    }

    /// Runs layer `layer` (0-based) on `state` (no temporal tokens).
    pub fn layer(
        &self,
        tape: &mut Tape,
        layer: usize,
        state: Var,
        action: &BoundAction,
        temporal: Option<Var>,
    ) -> LayerStep {
        let kept = tape.value(state).rows();
        let mut input = state;
        if let (BoundAction::Verb(ps), true) = (action, layer > 0) {
            let class = tape.slice_rows(state, 0, 1);
            let patches = tape.slice_rows(state, 2, self.num_patches);
            input = tape.concat_rows(&[class, ps[layer], patches]);
        }
        if let Some(t) = temporal {
            input = tape.concat_rows(&[input, t]);
        }
        let out = self.blocks[layer].forward(tape, input, None);
        let output = if tape.value(out.output).rows() == kept {
            out.output
        } else {
            tape.slice_rows(out.output, 0, kept)
        };
        let (attention, full_attention) = if action.is_some() {
            let seq = tape.value(input).rows();
            let heads = out.probs.len();
            let mut full_rows = Vec::with_capacity(heads);
            for &p in &out.probs {
                full_rows.push(tape.slice(p, 1, 1, 0, seq));
            }
            let mut sum = full_rows[0];
            for &r in &full_rows[1..] {
                sum = tape.add(sum, r);
            }
            let full = tape.scale(sum, 1.0 / heads as f64);
            let patches = tape.slice(full, 0, 1, 2, self.num_patches);
            (Some(patches), Some(full))
        } else {
            (None, None)
        };
        LayerStep {
            input,
            output,
            attention,
            full_attention,
        }
    }

    /// `ln_post(class) · proj`, `1 x D`.
    pub fn feature(&self, tape: &mut Tape, state: Var) -> Var {
        let class = tape.slice_rows(state, 0, 1);
        let normed = self.ln_post.forward(tape, class);
        tape.matmul(normed, self.proj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Class,
    ActionPrompt,
    Patch(usize),
    Temporal(usize),
}

/// A token sequence with per-position tags.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub tokens: Matrix,
    pub kinds: Vec<TokenKind>,
}

impl LayerState {
    pub fn from_values(tokens: Matrix, has_prompt: bool, num_patches: usize) -> Self {
        let mut kinds = vec![TokenKind::Class];
        if has_prompt {
            kinds.push(TokenKind::ActionPrompt);
        }
        kinds.extend((0..num_patches).map(TokenKind::Patch));
        let extra = tokens.rows() - kinds.len();
        kinds.extend((0..extra).map(TokenKind::Temporal));
        Self { tokens, kinds }
    }

    pub fn class(&self) -> &[f64] {
        self.tokens.row(0)
    }

    pub fn prompt(&self) -> Option<&[f64]> {
        self.position(|k| k == TokenKind::ActionPrompt)
            .map(|i| self.tokens.row(i))
    }

    pub fn patches(&self) -> Matrix {
        let idx: Vec<usize> = self.positions(|k| matches!(k, TokenKind::Patch(_)));
        Matrix::from_rows(&idx.iter().map(|&i| self.tokens.row_vec(i)).collect::<Vec<_>>())
    }

    pub fn temporal_count(&self) -> usize {
        self.positions(|k| matches!(k, TokenKind::Temporal(_))).len()
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    fn position(&self, pred: impl Fn(TokenKind) -> bool) -> Option<usize> {
        self.kinds.iter().position(|&k| pred(k))
    }

    fn positions(&self, pred: impl Fn(TokenKind) -> bool) -> Vec<usize> {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, &k)| pred(k))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-layer prompt→patch attention rows for one frame and one prompt stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionStack {
    /// `rows[l]` has `N_p` entries.
    pub rows: Vec<Vec<f64>>,
    /// Attention mass the prompt put on non-patch tokens, per layer.
    pub excluded: Vec<f64>,
}

impl AttentionStack {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let excluded = rows.iter().map(|r| 1.0 - r.iter().sum::<f64>()).collect();
        Self { rows, excluded }
    }

    pub(crate) fn push(&mut self, tape: &Tape, row: Var, full: Var) {
        let values = tape.value(row).row_vec(0);
        let total: f64 = tape.value(full).as_slice().iter().sum();
        self.excluded.push(total - values.iter().sum::<f64>());
        self.rows.push(values);
    }

    pub fn num_layers(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ImageForward {
    /// `ln_post(x_N) · proj`
    pub feature: Vec<f64>,
    pub final_state: LayerState,
    pub layer_inputs: Vec<LayerState>,
    pub attention: AttentionStack,
}
