//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod oracle;
pub mod recurrence;

use actprompt_core::aci::AnnotationVerbExtractor;
use actprompt_core::data::{
    generate_synthetic, AnnotationRecord, AnnotationSet, MomentSpan, RawVideo, SyntheticDataset, SyntheticSpec,
};
use actprompt_core::encoders::{EncoderConfig, FrameTensor};
use actprompt_core::pipeline::{quadruple_objective, PreparedDataset, RunConfig, TrainConfig};
use actprompt_core::pretext::{LossWeights, MomentQuadruple};
use actprompt_core::{Matrix, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 8x8 frames, 4 patches, D=8, two layers.
pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        image_size: 8,
        patch_size: 4,
        embed_dim: 8,
        video_dim: 6,
        num_layers: 2,
        num_heads: 2,
        vocab_size: 64,
        max_tokens: 8,
        mlp_ratio: 2,
        init_std: 0.3,
        ..Default::default()
    }
}

pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        encoder: tiny_encoder(),
        radius: 1,
        ..Default::default()
    }
}

pub fn random_video(id: &str, clips: usize, frames_per_clip: usize, cfg: &EncoderConfig, seed: u64) -> RawVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.channels * cfg.image_size * cfg.image_size;
    let frames = (0..clips * frames_per_clip)
        .map(|_| {
            let pixels = (0..n).map(|_| rng.random_range(0..64) as f64 / 64.0).collect();
            FrameTensor::new(cfg.channels, cfg.image_size, pixels).unwrap()
        })
        .collect();
    RawVideo {
        id: id.into(),
        fps: frames_per_clip as f64 / 2.0,
        frames,
    }
}

/// Fills every trainable tensor with uniform noise in `[-scale, scale]`.
pub fn randomize_trainables(model: &mut Model, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.trainables.visit_mut(&mut |_, m: &mut Matrix| {
        for v in m.as_mut_slice() {
            *v = rng.random_range(-scale..scale);
        }
    });
}

pub struct Fixture {
    pub model: Model,
    pub data: PreparedDataset,
    pub quad: MomentQuadruple,
    pub batch_queries: Matrix,
}

/// Two 2-clip videos; the quadruple is clip 0 of `a` (positive), clip 1 of
/// `a` (intra) and clip 0 of `b` (inter).
pub fn two_frame_fixture(config: &ModelConfig, seed: u64) -> Fixture {
    let mut model = Model::new(config).unwrap();
    randomize_trainables(&mut model, 0.3, seed);
    let videos = vec![
        random_video("a", 2, 2, &config.encoder, seed + 1),
        random_video("b", 2, 2, &config.encoder, seed + 2),
    ];
    let record = |qid: &str, vid: &str, query: &str| AnnotationRecord {
        qid: qid.into(),
        vid: vid.into(),
        duration: 4.0,
        query: query.into(),
        relevant_windows: vec![[0.0, 2.0]],
        saliency_scores: None,
        verb_index: Some(1),
    };
    let annotations = AnnotationSet {
        scale: Default::default(),
        records: vec![record("q0", "a", "cat jumps left"), record("q1", "b", "dog runs up")],
    };
    let data = PreparedDataset::new(&model, &annotations, &videos, 2.0, &AnnotationVerbExtractor).unwrap();
    let quad = MomentQuadruple {
        qid: "q0".into(),
        positive: MomentSpan::new("a", 0.0, 2.0),
        intra_negative: MomentSpan::new("a", 2.0, 4.0),
        inter_negative: MomentSpan::new("b", 0.0, 2.0),
        query: "cat jumps left".into(),
        annotated_verb: Some(1),
        shrunk: false,
    };
    let batch_queries = Matrix::from_rows(&[data.queries[0].query.clone(), data.queries[1].query.clone()]);
    Fixture {
        model,
        data,
        quad,
        batch_queries,
    }
}

impl Fixture {
    pub fn total(&self, model: &Model) -> f64 {
        quadruple_objective(
            model,
            &self.data,
            &self.quad,
            &self.data.queries[0],
            &self.batch_queries,
            0,
            &LossWeights::default(),
        )
        .unwrap()
        .losses
        .l_total
    }

    pub fn analytic(&self) -> Vec<(String, Matrix)> {
        let out = quadruple_objective(
            &self.model,
            &self.data,
            &self.quad,
            &self.data.queries[0],
            &self.batch_queries,
            0,
            &LossWeights::default(),
        )
        .unwrap();
        let names: Vec<String> = self.model.trainables.tensors().into_iter().map(|(n, _)| n).collect();
        names.into_iter().zip(out.grads).collect()
    }

    /// Central differences of `L_total` for every scalar of tensor `name`.
    pub fn numeric(&self, name: &str, h: f64) -> Matrix {
        let shape = self
            .model
            .trainables
            .tensors()
            .into_iter()
            .find(|(n, _)| n == name)
            .unwrap()
            .1
            .shape();
        let mut out = Matrix::zeros(shape.0, shape.1);
        for i in 0..shape.0 * shape.1 {
            let eval = |delta: f64| {
                let mut m = self.model.clone();
                m.trainables.visit_mut(&mut |n, t: &mut Matrix| {
                    if n == name {
                        t.as_mut_slice()[i] += delta;
                    }
                });
                self.total(&m)
            };
            out.as_mut_slice()[i] = (eval(h) - eval(-h)) / (2.0 * h);
        }
        out
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute difference when both vanish.
pub fn relative_error(a: &Matrix, n: &Matrix) -> f64 {
    let norm = |m: &[f64]| m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.as_slice().iter().zip(n.as_slice()).map(|(x, y)| x - y).collect();
    let scale = norm(a.as_slice()).max(norm(n.as_slice()));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// 16x16 frames with 4x4 patches, small enough for whole fine-tuning runs.
pub fn small_run_config() -> RunConfig {
    RunConfig {
        encoder: EncoderConfig {
            image_size: 16,
            patch_size: 4,
            embed_dim: 8,
            video_dim: 6,
            num_layers: 2,
            num_heads: 2,
            vocab_size: 64,
            max_tokens: 8,
            mlp_ratio: 2,
            ..Default::default()
        },
        train: TrainConfig {
            epochs: 2,
            data_ratio: 0.5,
            batch_size: 4,
            ..Default::default()
        },
        ..Default::default()
    }
}

pub fn small_synthetic(num_videos: usize, seed: u64) -> SyntheticDataset {
    generate_synthetic(&SyntheticSpec {
        num_videos,
        clips_per_video: 4,
        image_size: 16,
        frames_per_clip: 2,
        square_size: 4,
        max_window_clips: 2,
        seed,
        ..Default::default()
    })
    .unwrap()
}

pub fn prepare(model: &Model, config: &RunConfig, data: &SyntheticDataset) -> PreparedDataset {
    let extractor = config.verb_extractor.build();
    PreparedDataset::new(
        model,
        &data.annotations,
        &data.videos,
        config.data.clip_length,
        extractor.as_ref(),
    )
    .unwrap()
}
