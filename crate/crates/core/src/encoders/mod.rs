//! Frozen toy towers: ViT-style image encoder with prompt slots, causal text
//! encoder, and a pluggable clip-level video feature provider.

pub mod config;
pub mod frame;
pub mod image;
pub mod layers;
pub mod text;
pub mod tokenizer;
pub mod video;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use config::EncoderConfig;
pub use frame::FrameTensor;
pub use image::{ActionPrompt, AttentionStack, ImageEncoder, ImageForward, LayerState, PromptPack, TokenKind};
pub use layers::ParamVisitor;
pub use text::{TextEncoder, TextOutput};
pub use tokenizer::{TokenizedQuery, Tokenizer};
pub use video::{PrecomputedVideoFeatures, StatisticsVideoEncoder, VideoFeatureProvider};

use crate::error::Result;
use crate::tensor::Matrix;

/// The frozen part of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub config: EncoderConfig,
    pub image: ImageEncoder,
    pub text: TextEncoder,
    pub video: StatisticsVideoEncoder,
}

impl Backbone {
    /// Deterministic in `config.seed`; each tower draws from its own stream.
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        let image = ImageEncoder::init(config, &mut rng);
        rng.set_stream(2);
        let text = TextEncoder::init(config, &mut rng);
        rng.set_stream(3);
        let video = StatisticsVideoEncoder::init(config, &mut rng);
        Ok(Self {
            config: config.clone(),
            image,
            text,
            video,
        })
    }

    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.config.vocab_size, self.config.max_tokens)
    }

    pub fn visit(&self, v: &mut dyn ParamVisitor) {
        self.image.visit(v);
        self.text.visit(v);
        self.video.visit(v);
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_: &str, m: &Matrix| n += m.len());
        n
    }

    /// SHA-256 over every parameter's name, shape and little-endian bits.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        self.visit(&mut |name: &str, m: &Matrix| {
            hasher.update(name.as_bytes());
            hasher.update((m.rows() as u64).to_le_bytes());
            hasher.update((m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                hasher.update(v.to_le_bytes());
            }
        });
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
