//! Hand-unrolled 3-frame, T=1 trace of the layer recurrence. Each check
//! panics on the first mismatch.

#![allow(clippy::needless_range_loop)]

use super::{random_video, randomize_trainables, tiny_encoder};
use actprompt_core::autograd::Tape;
use actprompt_core::ctpl::{argmax_lowest, assemble_window};
use actprompt_core::encoders::{ImageForward, PromptPack, TokenKind};
use actprompt_core::{Matrix, Model, ModelConfig, Stream};

const FRAMES: usize = 3;

fn model() -> Model {
    let config = ModelConfig {
        encoder: actprompt_core::encoders::EncoderConfig {
            num_layers: 3,
            ..tiny_encoder()
        },
        radius: 1,
        ..Default::default()
    };
    let mut model = Model::new(&config).unwrap();
    randomize_trainables(&mut model, 0.5, 11);
    model
}

/// Per-frame forwards where layer `l` consumes the hand-built temporal prompts
/// of layers `< l`. Returns the final forwards and the prompts.
fn hand_unroll(model: &Model, packs: &[PromptPack]) -> (Vec<ImageForward>, Vec<Vec<Matrix>>, Vec<Vec<usize>>) {
    let video = video(model);
    let image = &model.backbone.image;
    let tm = &model.trainables.temporal;
    let n_layers = model.config.encoder.num_layers;
    let mut temporal: Vec<Vec<Matrix>> = Vec::new();
    let mut selections = Vec::new();
    for layer in 0..n_layers - 1 {
        let forwards: Vec<ImageForward> = (0..FRAMES)
            .map(|t| {
                let pack = packs[t]
                    .clone()
                    .with_temporal(temporal.iter().map(|per_frame| Some(per_frame[t].clone())).collect());
                image.forward(&video.frames[t], &pack).unwrap()
            })
            .collect();
        let chosen: Vec<usize> = forwards
            .iter()
            .map(|f| argmax_lowest(&f.attention.rows[layer]))
            .collect();
        let selected = Matrix::from_rows(
            &forwards
                .iter()
                .zip(&chosen)
                .map(|(f, &i)| f.layer_inputs[layer + 1].patches().row_vec(i))
                .collect::<Vec<_>>(),
        );
        let prompts = (0..FRAMES)
            .map(|t| {
                let window = assemble_window(&selected, t, tm.radius, &tm.positional[layer]).unwrap();
                tm.generator.prompt(&window).unwrap()
            })
            .collect();
        temporal.push(prompts);
        selections.push(chosen);
    }
    let forwards = (0..FRAMES)
        .map(|t| {
            let pack = packs[t]
                .clone()
                .with_temporal(temporal.iter().map(|per_frame| Some(per_frame[t].clone())).collect());
            image.forward(&video.frames[t], &pack).unwrap()
        })
        .collect();
    (forwards, temporal, selections)
}

fn video(model: &Model) -> actprompt_core::model::PreparedVideo {
    let raw = random_video("v", FRAMES, 2, &model.config.encoder, 5);
    model.prepare_video(&raw, 2.0, None).unwrap()
}

fn query(model: &Model) -> actprompt_core::model::PreparedQuery {
    model
        .prepare_query(
            "person opens the door",
            Some(1),
            &actprompt_core::aci::AnnotationVerbExtractor,
        )
        .unwrap()
}

struct Swept {
    features: Vec<Vec<f64>>,
    inputs: Vec<Vec<Matrix>>,
    selections: Vec<Vec<usize>>,
    temporal: Vec<Vec<Matrix>>,
}

fn sweep(model: &Model, stream: Stream) -> Swept {
    let video = video(model);
    let q = query(model);
    let mut tape = Tape::new();
    let image = model.backbone.image.bind(&mut tape);
    let params = model.trainables.bind(&mut tape);
    let out = model
        .run_stream(&mut tape, &image, &params, &video, stream, Some(&q))
        .unwrap();
    Swept {
        features: out.features.iter().map(|&v| tape.value(v).row_vec(0)).collect(),
        inputs: out
            .layer_inputs
            .iter()
            .map(|per_layer| per_layer.iter().map(|&v| tape.value(v).clone()).collect())
            .collect(),
        selections: out.selections.clone(),
        temporal: out
            .temporal_prompts
            .iter()
            .map(|per_frame| per_frame.iter().map(|&v| tape.value(v).clone()).collect())
            .collect(),
    }
}

fn video_packs(model: &Model) -> Vec<PromptPack> {
    let video = video(model);
    (0..FRAMES)
        .map(|t| PromptPack::video(model.trainables.video.prompt(video.clip_features.row(t)).unwrap()))
        .collect()
}

fn verb_packs(model: &Model) -> Vec<PromptPack> {
    let prompts = model.trainables.verb.prompts(&query(model).verb_embeddings).unwrap();
    vec![PromptPack::verb(prompts); FRAMES]
}

pub fn sweep_equals_hand_unrolled_trace() {
    let model = model();
    for (stream, packs) in [(Stream::Video, video_packs(&model)), (Stream::Verb, verb_packs(&model))] {
        let swept = sweep(&model, stream);
        let (forwards, temporal, selections) = hand_unroll(&model, &packs);
        assert_eq!(swept.selections, selections, "{stream:?}");
        assert_eq!(swept.temporal, temporal, "{stream:?}");
        for t in 0..FRAMES {
            assert_eq!(swept.features[t], forwards[t].feature, "{stream:?} frame {t}");
            for (l, input) in swept.inputs[t].iter().enumerate() {
                assert_eq!(
                    input, &forwards[t].layer_inputs[l].tokens,
                    "{stream:?} frame {t} layer {l}"
                );
            }
        }
    }
}

pub fn sequence_layout_and_temporal_drop() {
    let model = model();
    let np = model.config.encoder.num_patches();
    let (forwards, temporal, _) = hand_unroll(&model, &video_packs(&model));
    for f in &forwards {
        // Layer 0 sees [x_0, p, E_0]; later layers also see 2T+1 temporal tokens.
        assert_eq!(f.layer_inputs[0].len(), 2 + np);
        assert_eq!(f.layer_inputs[0].temporal_count(), 0);
        for l in 1..3 {
            let s = &f.layer_inputs[l];
            assert_eq!(s.len(), 2 + np + 3);
            assert_eq!(s.kinds[0], TokenKind::Class);
            assert_eq!(s.kinds[1], TokenKind::ActionPrompt);
            assert_eq!(s.kinds[2], TokenKind::Patch(0));
            assert_eq!(s.kinds[2 + np], TokenKind::Temporal(0));
        }
        // Outputs drop the temporal tokens again.
        assert_eq!(f.final_state.len(), 2 + np);
        assert_eq!(f.final_state.temporal_count(), 0);
    }
    // The temporal tokens appended at layer 1 of the centre frame are the
    // generator output for frames (0, 1, 2); frame 0 replicates itself.
    let tm = &model.trainables.temporal;
    let sel: Vec<usize> = forwards.iter().map(|f| argmax_lowest(&f.attention.rows[0])).collect();
    let packs = video_packs(&model);
    let v = video(&model);
    let first: Vec<ImageForward> = (0..FRAMES)
        .map(|t| model.backbone.image.forward(&v.frames[t], &packs[t]).unwrap())
        .collect();
    let picked: Vec<Vec<f64>> = (0..FRAMES)
        .map(|t| first[t].layer_inputs[1].patches().row_vec(sel[t]))
        .collect();
    for (center, frames) in [(1usize, [0usize, 1, 2]), (0, [0, 0, 1]), (2, [1, 2, 2])] {
        let window = Matrix::from_fn(3, picked[0].len(), |r, c| {
            picked[frames[r]][c] + tm.positional[0].get(r, c)
        });
        let expected = tm.generator.prompt(&window).unwrap();
        assert_eq!(temporal[0][center], expected);
        let s = &forwards[center].layer_inputs[1];
        for r in 0..3 {
            assert_eq!(s.tokens.row(2 + np + r), expected.row(r));
        }
    }
}

pub fn verb_prompt_replaces_previous_output() {
    let model = model();
    let prompts = model.trainables.verb.prompts(&query(&model).verb_embeddings).unwrap();
    let (forwards, _, _) = hand_unroll(&model, &verb_packs(&model));
    let swept = sweep(&model, Stream::Verb);
    for (t, f) in forwards.iter().enumerate() {
        for l in 0..3 {
            assert_eq!(
                f.layer_inputs[l].prompt().unwrap(),
                prompts[l].as_slice(),
                "frame {t} layer {l}"
            );
            assert_eq!(swept.inputs[t][l].row(1), prompts[l].as_slice());
        }
    }
    // The video stream keeps its propagated prompt instead.
    let video_prompt = model
        .trainables
        .video
        .prompt(video(&model).clip_features.row(0))
        .unwrap();
    let (vf, _, _) = hand_unroll(&model, &video_packs(&model));
    assert_eq!(vf[0].layer_inputs[0].prompt().unwrap(), video_prompt.as_slice());
    assert_ne!(vf[0].layer_inputs[1].prompt().unwrap(), video_prompt.as_slice());
}
