//! Causal transformer text tower exposing every layer's token embeddings.

use rand::Rng;

use super::config::EncoderConfig;
use super::layers::{causal_mask, truncated_normal, Block, LayerNorm, ParamVisitor};
use crate::autograd::Tape;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub config: EncoderConfig,
    /// `vocab_size x D`
    pub token_embedding: Matrix,
    /// `max_tokens x D`
    pub positional: Matrix,
    pub blocks: Vec<Block>,
    pub ln_final: LayerNorm,
    pub proj: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextOutput {
    /// `layers[l]` is the `N x D` output of layer `l` (0-based).
    pub layers: Vec<Matrix>,
    /// Query representation `t^q`: projected final-layer embedding at EOS.
    pub query: Vec<f64>,
}

impl TextOutput {
    /// `e^l_v` for every layer.
    pub fn token_across_layers(&self, position: usize) -> Vec<Vec<f64>> {
        self.layers.iter().map(|m| m.row_vec(position)).collect()
    }
}

impl TextEncoder {
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        let d = config.embed_dim;
        let std = config.init_std;
        Self {
            config: config.clone(),
            token_embedding: truncated_normal(rng, config.vocab_size, d, std),
            positional: truncated_normal(rng, config.max_tokens, d, std),
            blocks: (0..config.num_layers)
                .map(|_| Block::init(rng, d, config.mlp_dim(), config.num_heads, std))
                .collect(),
            ln_final: LayerNorm::new(d),
            proj: truncated_normal(rng, d, d, std),
        }
    }

    pub fn visit(&self, v: &mut dyn ParamVisitor) {
        v.visit("text.token_embedding", &self.token_embedding);
        v.visit("text.positional", &self.positional);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("text.blocks.{i}"), v);
        }
        v.visit("text.ln_final.gamma", &self.ln_final.gamma);
        v.visit("text.ln_final.beta", &self.ln_final.beta);
        v.visit("text.proj", &self.proj);
    }

    /// Token embedding plus position, before the first layer.
    pub fn embed_tokens(&self, ids: &[usize]) -> Result<Matrix> {
        if ids.is_empty() {
            return Err(Error::input("empty token sequence"));
        }
        if ids.len() > self.config.max_tokens {
            return Err(Error::input(format!(
                "{} tokens exceed max_tokens {}",
                ids.len(),
                self.config.max_tokens
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::input(format!("token id {bad} outside vocabulary")));
        }
        Ok(Matrix::from_fn(ids.len(), self.config.embed_dim, |r, c| {
            self.token_embedding.get(ids[r], c) + self.positional.get(r, c)
        }))
    }

    /// The last token is taken as EOS for `t^q`.
    pub fn forward(&self, ids: &[usize]) -> Result<TextOutput> {
        let embedded = self.embed_tokens(ids)?;
        let mut tape = Tape::new();
        let mask = tape.constant(causal_mask(ids.len()));
        let mut x = tape.constant(embedded);
        let mut layers = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let bound = block.bind(&mut tape);
            x = bound.forward(&mut tape, x, Some(mask)).output;
            layers.push(tape.value(x).clone());
        }
        let eos = tape.slice_rows(x, ids.len() - 1, 1);
        let ln = self.ln_final.bind(&mut tape);
        let normed = ln.forward(&mut tape, eos);
        let proj = tape.constant(self.proj.clone());
        let q = tape.matmul(normed, proj);
        Ok(TextOutput {
            layers,
            query: tape.value(q).row_vec(0),
        })
    }
}
