use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of the toy image/text/video towers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub video_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    /// Width multiplier of the transformer MLP.
    pub mlp_ratio: usize,
    /// Std of the truncated-normal backbone initialization.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            channels: 3,
            embed_dim: 64,
            video_dim: 48,
            num_layers: 4,
            num_heads: 4,
            vocab_size: 1024,
            max_tokens: 16,
            mlp_ratio: 4,
            init_std: 0.125,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.channels == 0 || self.embed_dim == 0 || self.video_dim == 0 {
            return Err(Error::config("channels, embed_dim and video_dim must be positive"));
        }
        if self.num_layers == 0 {
            return Err(Error::config("num_layers must be positive"));
        }
        if self.vocab_size < 3 {
            return Err(Error::config("vocab_size must leave room for BOS/EOS and words"));
        }
        if self.max_tokens < 3 {
            return Err(Error::config("max_tokens must fit BOS, one word and EOS"));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::config("mlp_ratio must be positive"));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(Error::config("init_std must be positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// N_p
    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn mlp_dim(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }
}
