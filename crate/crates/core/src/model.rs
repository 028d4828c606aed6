//! The prompted model: frozen backbone plus the trainable couplers, temporal
//! generator and positional tables, and the per-video forward used by
//! training, extraction and inspection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aci::{couple, VerbCouplerStack, VerbExtractor, VerbIndex, VideoCoupler};
use crate::autograd::{Gradients, Tape, Var};
use crate::ctpl::{sweep, BoundGenerator, BoundTemporal, StreamCue, SweepOutput, TemporalModule};
use crate::data::clips::{clip_frames, clipize};
use crate::data::RawVideo;
use crate::encoders::image::BoundImageEncoder;
use crate::encoders::{Backbone, EncoderConfig, FrameTensor, ParamVisitor, TokenizedQuery, VideoFeatureProvider};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// What the couplers are fed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// Clip features and verb embeddings.
    #[default]
    Action,
    /// A fixed constant input, so the prompts are plain learnable vectors
    /// with the same parameter count.
    Vanilla,
}

impl std::str::FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "action" => Ok(Self::Action),
            "vanilla" => Ok(Self::Vanilla),
            other => Err(Error::config(format!("unknown prompt mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Temporal window radius `T`.
    pub radius: usize,
    /// Hidden width of `F_tem`; `0` means `D`.
    pub hidden_width: usize,
    pub use_temporal: bool,
    pub prompt_mode: PromptMode,
    /// Std of the truncated-normal coupler and generator weights.
    pub coupler_init_std: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            radius: 1,
            hidden_width: 0,
            use_temporal: true,
            prompt_mode: PromptMode::Action,
            coupler_init_std: 0.02,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn hidden(&self) -> usize {
        if self.hidden_width == 0 {
            self.encoder.embed_dim
        } else {
            self.hidden_width
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if !(self.coupler_init_std.is_finite() && self.coupler_init_std >= 0.0) {
            return Err(Error::config(format!(
                "coupler_init_std must be finite and nonnegative, got {}",
                self.coupler_init_std
            )));
        }
        Ok(())
    }
}

/// Every parameter that receives updates during fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainables {
    pub video: VideoCoupler,
    pub verb: VerbCouplerStack,
    pub temporal: TemporalModule,
}

impl Trainables {
    pub fn init(config: &ModelConfig) -> Self {
        let d = config.encoder.embed_dim;
        let std = config.coupler_init_std;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(10);
        Self {
            video: VideoCoupler::init(&mut rng, d, config.encoder.video_dim, std),
            verb: VerbCouplerStack::init(&mut rng, config.encoder.num_layers, d, std),
            temporal: TemporalModule::init(
                &mut rng,
                config.encoder.num_layers,
                d,
                config.radius,
                config.hidden(),
                std,
            ),
        }
    }

    /// Visits every tensor in a fixed order; [`Trainables::visit_mut`] and
    /// [`BoundTrainables::vars`] use the same order.
    pub fn visit(&self, v: &mut dyn ParamVisitor) {
        v.visit("video.weight", &self.video.weight);
        v.visit("video.bias", &self.video.bias);
        for (l, (w, b)) in self.verb.weights.iter().zip(&self.verb.biases).enumerate() {
            v.visit(&format!("verb.{l}.weight"), w);
            v.visit(&format!("verb.{l}.bias"), b);
        }
        for (l, p) in self.temporal.positional.iter().enumerate() {
            v.visit(&format!("temporal.positional.{l}"), p);
        }
        let g = &self.temporal.generator;
        v.visit("temporal.w1", &g.w1);
        v.visit("temporal.b1", &g.b1);
        v.visit("temporal.w2", &g.w2);
        v.visit("temporal.b2", &g.b2);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("video.weight", &mut self.video.weight);
        f("video.bias", &mut self.video.bias);
        for (l, (w, b)) in self.verb.weights.iter_mut().zip(&mut self.verb.biases).enumerate() {
            f(&format!("verb.{l}.weight"), w);
            f(&format!("verb.{l}.bias"), b);
        }
        for (l, p) in self.temporal.positional.iter_mut().enumerate() {
            f(&format!("temporal.positional.{l}"), p);
        }
        let g = &mut self.temporal.generator;
        f("temporal.w1", &mut g.w1);
        f("temporal.b1", &mut g.b1);
        f("temporal.w2", &mut g.w2);
        f("temporal.b2", &mut g.b2);
    }

    pub fn tensors(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        self.visit(&mut |name: &str, m: &Matrix| out.push((name.to_string(), m.clone())));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.video.parameter_count() + self.verb.parameter_count() + self.temporal.parameter_count()
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_: &str, m: &Matrix| ok &= m.is_finite());
        ok
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundTrainables {
        let g = &self.temporal.generator;
        BoundTrainables {
            video_weight: tape.param(self.video.weight.clone()),
            video_bias: tape.param(self.video.bias.clone()),
            verb: self
                .verb
                .weights
                .iter()
                .zip(&self.verb.biases)
                .map(|(w, b)| (tape.param(w.clone()), tape.param(b.clone())))
                .collect(),
            temporal: BoundTemporal {
                radius: self.temporal.radius,
                positional: self.temporal.positional.iter().map(|p| tape.param(p.clone())).collect(),
                generator: BoundGenerator {
                    w1: tape.param(g.w1.clone()),
                    b1: tape.param(g.b1.clone()),
                    w2: tape.param(g.w2.clone()),
                    b2: tape.param(g.b2.clone()),
                },
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundTrainables {
    pub video_weight: Var,
    pub video_bias: Var,
    pub verb: Vec<(Var, Var)>,
    pub temporal: BoundTemporal,
}

impl BoundTrainables {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.video_weight, self.video_bias];
        for &(w, b) in &self.verb {
            out.push(w);
            out.push(b);
        }
        out.extend(&self.temporal.positional);
        let g = &self.temporal.generator;
        out.extend([g.w1, g.b1, g.w2, g.b2]);
        out
    }

    /// Gradients in [`Trainables::visit`] order, zeros where none flowed.
    pub fn collect(&self, tape: &Tape, grads: &Gradients) -> Vec<Matrix> {
        self.vars()
            .into_iter()
            .map(|v| grads.get_or_zeros(v, tape.value(v)))
            .collect()
    }
}

/// Trainable parameter groups; tensor names start with the group's prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    VideoCoupler,
    VerbCouplers,
    Temporal,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::VideoCoupler, ParamGroup::VerbCouplers, ParamGroup::Temporal];

    pub fn of(tensor: &str) -> Option<Self> {
        match tensor.split('.').next()? {
            "video" => Some(Self::VideoCoupler),
            "verb" => Some(Self::VerbCouplers),
            "temporal" => Some(Self::Temporal),
            _ => None,
        }
    }
}

/// Exact parameter counts by module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParameterCounts {
    pub video_coupler: usize,
    pub verb_couplers: usize,
    pub temporal: usize,
    /// Prompt parameters held fixed during fine-tuning.
    pub frozen_prompts: usize,
    pub image_encoder: usize,
    pub text_encoder: usize,
    pub video_encoder: usize,
}

impl ParameterCounts {
    pub fn trainable(&self) -> usize {
        self.video_coupler + self.verb_couplers + self.temporal
    }

    pub fn frozen(&self) -> usize {
        self.image_encoder + self.text_encoder + self.video_encoder + self.frozen_prompts
    }

    /// Moves the given groups to the frozen side.
    pub fn freeze(mut self, groups: &[ParamGroup]) -> Self {
        for g in groups {
            let n = match g {
                ParamGroup::VideoCoupler => &mut self.video_coupler,
                ParamGroup::VerbCouplers => &mut self.verb_couplers,
                ParamGroup::Temporal => &mut self.temporal,
            };
            self.frozen_prompts += std::mem::take(n);
        }
        self
    }

    pub fn trainable_fraction(&self) -> f64 {
        self.trainable() as f64 / (self.trainable() + self.frozen()) as f64
    }

    /// One line per module for the CLI banner.
    pub fn banner(&self) -> String {
        format!(
            "trainable {} (video coupler {}, verb couplers {}, temporal {}) | frozen {} (image {}, text {}, video {}, prompts {}) | {:.2}% trainable",
            self.trainable(),
            self.video_coupler,
            self.verb_couplers,
            self.temporal,
            self.frozen(),
            self.image_encoder,
            self.text_encoder,
            self.video_encoder,
            self.frozen_prompts,
            100.0 * self.trainable_fraction()
        )
    }
}

fn count(visit: impl FnOnce(&mut dyn ParamVisitor)) -> usize {
    let mut n = 0;
    visit(&mut |_: &str, m: &Matrix| n += m.len());
    n
}

/// A video ready for the image tower: `ln_pre`-ed tokens of every clip's
/// center frame and one clip feature per clip.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedVideo {
    pub id: String,
    pub duration: f64,
    pub clip_length: f64,
    /// `(1 + N_p) x D` per clip.
    pub tokens: Vec<Matrix>,
    pub frames: Vec<FrameTensor>,
    /// `L x D_V`
    pub clip_features: Matrix,
}

impl PreparedVideo {
    pub fn num_clips(&self) -> usize {
        self.tokens.len()
    }
}

/// A query passed through the frozen text tower.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedQuery {
    pub text: String,
    pub tokens: TokenizedQuery,
    pub verb: VerbIndex,
    /// `e^l_v`, one per layer.
    pub verb_embeddings: Vec<Vec<f64>>,
    /// `t^q`
    pub query: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Video,
    Verb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub trainables: Trainables,
}

impl Model {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: config.clone(),
            backbone: Backbone::new(&config.encoder)?,
            trainables: Trainables::init(config),
        })
    }

    pub fn parameter_counts(&self) -> ParameterCounts {
        let t = &self.trainables;
        ParameterCounts {
            video_coupler: t.video.parameter_count(),
            verb_couplers: t.verb.parameter_count(),
            temporal: if self.config.use_temporal {
                t.temporal.parameter_count()
            } else {
                0
            },
            frozen_prompts: 0,
            image_encoder: count(|v| self.backbone.image.visit(v)),
            text_encoder: count(|v| self.backbone.text.visit(v)),
            video_encoder: count(|v| self.backbone.video.visit(v)),
        }
    }

    /// Clips the video and computes the frozen per-clip inputs.
    pub fn prepare_video(
        &self,
        video: &RawVideo,
        clip_length: f64,
        provider: Option<&dyn VideoFeatureProvider>,
    ) -> Result<PreparedVideo> {
        let clips = clipize(video, clip_length)?;
        let frames: Vec<FrameTensor> = clips.iter().map(|c| video.frames[c.representative()].clone()).collect();
        let tokens = frames
            .iter()
            .map(|f| self.backbone.image.initial_tokens(f))
            .collect::<Result<Vec<_>>>()?;
        let per_clip: Vec<Vec<FrameTensor>> = clips.iter().map(|c| clip_frames(video, c).to_vec()).collect();
        let provider: &dyn VideoFeatureProvider = provider.unwrap_or(&self.backbone.video);
        let clip_features = provider.clip_features(&video.id, &per_clip)?;
        if clip_features.shape() != (clips.len(), self.config.encoder.video_dim) {
            return Err(Error::config(format!(
                "video features for `{}` are {:?}, expected ({}, {})",
                video.id,
                clip_features.shape(),
                clips.len(),
                self.config.encoder.video_dim
            )));
        }
        Ok(PreparedVideo {
            id: video.id.clone(),
            duration: video.duration(),
            clip_length,
            tokens,
            frames,
            clip_features,
        })
    }

    pub fn prepare_query(
        &self,
        text: &str,
        annotated_verb: Option<usize>,
        extractor: &dyn VerbExtractor,
    ) -> Result<PreparedQuery> {
        let tokens = self.backbone.tokenizer().encode(text);
        if tokens.words.is_empty() {
            return Err(Error::input("query has no words"));
        }
        let verb = extractor.extract(&tokens, annotated_verb);
        let out = self.backbone.text.forward(&tokens.ids)?;
        Ok(PreparedQuery {
            text: text.to_string(),
            verb_embeddings: out.token_across_layers(verb.index),
            query: out.query,
            tokens,
            verb,
        })
    }

    fn constant_input(dim: usize) -> Matrix {
        Matrix::from_vec(1, dim, vec![1.0 / (dim as f64).sqrt(); dim])
    }

    /// Builds the prompts of `stream` on the tape and runs the layer sweep
    /// over every clip of `video`.
    pub fn run_stream(
        &self,
        tape: &mut Tape,
        image: &BoundImageEncoder,
        params: &BoundTrainables,
        video: &PreparedVideo,
        stream: Stream,
        query: Option<&PreparedQuery>,
    ) -> Result<SweepOutput> {
        let vanilla = self.config.prompt_mode == PromptMode::Vanilla;
        let cue = match stream {
            Stream::Video => {
                let prompts = (0..video.num_clips())
                    .map(|t| {
                        let input = if vanilla {
                            Self::constant_input(self.config.encoder.video_dim)
                        } else {
                            Matrix::row_vector(video.clip_features.row(t))
                        };
                        let input = tape.constant(input);
                        couple(tape, input, params.video_weight, params.video_bias)
                    })
                    .collect();
                StreamCue::Video(prompts)
            }
            Stream::Verb => {
                let query = query.ok_or_else(|| Error::Usage("the verb-guided stream needs a query".into()))?;
                let prompts = params
                    .verb
                    .iter()
                    .zip(&query.verb_embeddings)
                    .map(|(&(w, b), e)| {
                        let input = if vanilla {
                            Self::constant_input(self.config.encoder.embed_dim)
                        } else {
                            Matrix::row_vector(e)
                        };
                        let input = tape.constant(input);
                        couple(tape, input, w, b)
                    })
                    .collect();
                StreamCue::Verb(prompts)
            }
        };
        let frames: Vec<Var> = video.tokens.iter().map(|m| tape.constant(m.clone())).collect();
        let temporal = self.config.use_temporal.then_some(&params.temporal);
        Ok(sweep(tape, image, &frames, &cue, temporal))
    }

    /// Per-clip image features `L x D` of one stream, without gradients.
    pub fn clip_features(
        &self,
        video: &PreparedVideo,
        stream: Stream,
        query: Option<&PreparedQuery>,
    ) -> Result<Matrix> {
        let mut tape = Tape::new();
        let image = self.backbone.image.bind(&mut tape);
        let params = self.trainables.bind(&mut tape);
        let out = self.run_stream(&mut tape, &image, &params, video, stream, query)?;
        let rows: Vec<Vec<f64>> = out.features.iter().map(|&f| tape.value(f).row_vec(0)).collect();
        Ok(Matrix::from_rows(&rows))
    }
}
