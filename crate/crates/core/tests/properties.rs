//! Property tests for the loss functions, samplers, clip partition, metrics
//! and on-disk formats.

mod common;

use std::collections::BTreeSet;

use actprompt_core::aci::consistency_loss;
use actprompt_core::data::annotations::parse_annotations;
use actprompt_core::data::{
    clipize, write_annotations, AnnotationRecord, AnnotationSet, FeatureBundle, MomentSpan, RawVideo, SaliencyScale,
};
use actprompt_core::encoders::{AttentionStack, FrameTensor};
use actprompt_core::pipeline::metrics::RECALL_THRESHOLDS;
use actprompt_core::pipeline::sampler::num_chunks;
use actprompt_core::pipeline::{
    disjoint_epoch_sampler, evaluate_retrieval, Checkpoint, GroundingPrediction, RunConfig,
};
use actprompt_core::pretext::{sample_intra_negative, triplet_loss, SamplingConfig};
use actprompt_core::{Matrix, Model};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

fn attention(frames: usize, layers: usize, patches: usize) -> impl Strategy<Value = Vec<AttentionStack>> {
    prop::collection::vec(
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, patches), layers).prop_map(AttentionStack::from_rows),
        frames,
    )
}

fn attention_pair() -> impl Strategy<Value = (Vec<AttentionStack>, Vec<AttentionStack>)> {
    (1usize..4, 1usize..4, 1usize..6).prop_flat_map(|(t, l, p)| (attention(t, l, p), attention(t, l, p)))
}

fn interesting_f32() -> impl Strategy<Value = f32> {
    prop_oneof![
        Just(0.0f32),
        Just(-0.0f32),
        Just(f32::MIN_POSITIVE / 4.0),
        Just(-f32::MIN_POSITIVE / 3.0),
        Just(f32::MAX),
        Just(f32::MIN),
        prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO,
    ]
}

fn bundle() -> impl Strategy<Value = FeatureBundle> {
    (1usize..5, 1usize..5, 1usize..4, "[a-z0-9_]{1,12}").prop_flat_map(|(clips, dim, vdim, id)| {
        (
            prop::collection::vec(interesting_f32(), clips * dim),
            prop::collection::vec(interesting_f32(), clips * vdim),
            prop::option::of(prop::collection::vec(interesting_f32(), clips * dim)),
            prop::option::of(prop::collection::vec(interesting_f32(), dim)),
        )
            .prop_map(move |(image, video, verb, query)| FeatureBundle {
                video_id: id.clone(),
                num_clips: clips,
                embed_dim: dim,
                video_dim: vdim,
                image_features: image,
                video_features: video,
                verb_features: verb,
                query,
            })
    })
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn record(i: usize) -> impl Strategy<Value = AnnotationRecord> {
    (
        0.5f64..500.0,
        "[a-z]{1,8}( [a-z]{1,8}){0,5}",
        prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..4),
        prop::option::of(prop::collection::vec(0u32..=4, 0..8)),
        any::<prop::sample::Index>(),
        any::<bool>(),
        "[a-z0-9]{1,6}",
    )
        .prop_map(move |(duration, query, spans, scores, verb, has_verb, vid)| {
            let words = query.split_whitespace().count();
            AnnotationRecord {
                qid: format!("q{i}"),
                vid,
                duration,
                relevant_windows: spans
                    .into_iter()
                    .map(|(a, b)| {
                        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                        [lo * duration, hi * duration]
                    })
                    .collect(),
                query,
                saliency_scores: scores,
                verb_index: has_verb.then(|| verb.index(words)),
            }
        })
}

fn annotation_set() -> impl Strategy<Value = AnnotationSet> {
    let records: Vec<_> = (0..100).map(record).collect();
    (records, prop_oneof![Just((0u32, 4u32)), Just((0, 10)), Just((1, 5))]).prop_map(|(records, (min, max))| {
        AnnotationSet {
            scale: SaliencyScale { min, max },
            records,
        }
    })
}

/// Ground truth and predictions on a 60 s grid with up to 3 windows per query.
fn retrieval_case() -> impl Strategy<Value = (AnnotationSet, Vec<GroundingPrediction>)> {
    let window = (0u32..60, 1u32..20).prop_map(|(s, l)| [s as f64, (s + l).min(60) as f64]);
    let query = (
        prop::collection::vec(window.clone(), 1..4),
        prop::collection::vec((window, 0.0f64..1.0), 0..5),
    );
    prop::collection::vec(query, 1..8).prop_map(|queries| {
        let mut set = AnnotationSet::default();
        let mut preds = Vec::new();
        for (i, (gts, ps)) in queries.into_iter().enumerate() {
            set.records.push(AnnotationRecord {
                qid: format!("q{i}"),
                vid: format!("v{i}"),
                duration: 60.0,
                query: "a square moves".into(),
                relevant_windows: gts,
                saliency_scores: None,
                verb_index: None,
            });
            preds.push(GroundingPrediction {
                qid: format!("q{i}"),
                pred_relevant_windows: ps.into_iter().map(|(w, c)| [w[0], w[1], c]).collect(),
                pred_saliency_scores: Vec::new(),
            });
        }
        (set, preds)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn triplet_loss_is_scale_invariant(
        reps in prop::collection::vec(vector(6), 6),
        query in vector(6),
        scales in prop::collection::vec(0.01f64..100.0, 7),
    ) {
        let base = triplet_loss(
            [&reps[0], &reps[1], &reps[2]],
            [&reps[3], &reps[4], &reps[5]],
            &query,
        ).unwrap();
        let scaled: Vec<Vec<f64>> = reps.iter().zip(&scales).map(|(r, s)| r.iter().map(|x| x * s).collect()).collect();
        let q: Vec<f64> = query.iter().map(|x| x * scales[6]).collect();
        let other = triplet_loss(
            [&scaled[0], &scaled[1], &scaled[2]],
            [&scaled[3], &scaled[4], &scaled[5]],
            &q,
        ).unwrap();
        prop_assert!((base - other).abs() < 1e-9, "{base} vs {other}");
    }

    #[test]
    fn triplet_loss_ignores_negative_order(reps in prop::collection::vec(vector(5), 6), query in vector(5)) {
        let a = triplet_loss([&reps[0], &reps[1], &reps[2]], [&reps[3], &reps[4], &reps[5]], &query).unwrap();
        let b = triplet_loss([&reps[0], &reps[2], &reps[1]], [&reps[3], &reps[5], &reps[4]], &query).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a > 0.0);
    }

    #[test]
    fn consistency_loss_is_a_symmetric_nonnegative_distance((vid, veb) in attention_pair()) {
        let ab = consistency_loss(&vid, &veb).unwrap();
        let ba = consistency_loss(&veb, &vid).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(consistency_loss(&vid, &vid).unwrap(), 0.0);
        let differs = vid.iter().zip(&veb).any(|(a, b)| a.rows != b.rows);
        prop_assert_eq!(ab > 0.0, differs);
    }

    #[test]
    fn epoch_chunks_partition_the_samples(n in 0usize..400, ratio in 0.01f64..=1.0, seed in any::<u64>()) {
        let k = num_chunks(ratio).unwrap();
        let mut seen = BTreeSet::new();
        let mut sizes = Vec::new();
        for e in 0..k {
            let idx = disjoint_epoch_sampler(n, ratio, e, seed).unwrap();
            sizes.push(idx.len());
            for i in idx {
                prop_assert!(i < n);
                prop_assert!(seen.insert(i), "index {} drawn twice", i);
            }
        }
        prop_assert_eq!(seen.len(), n);
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert_eq!(disjoint_epoch_sampler(n, ratio, k, seed).unwrap(), disjoint_epoch_sampler(n, ratio, 0, seed).unwrap());
    }

    #[test]
    fn feature_bundles_round_trip_bitwise(b in bundle()) {
        let bytes = b.to_bytes().unwrap();
        let back = FeatureBundle::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.video_id, &b.video_id);
        prop_assert_eq!((back.num_clips, back.embed_dim, back.video_dim), (b.num_clips, b.embed_dim, b.video_dim));
        prop_assert_eq!(bits(&back.image_features), bits(&b.image_features));
        prop_assert_eq!(bits(&back.video_features), bits(&b.video_features));
        prop_assert_eq!(back.verb_features.as_deref().map(bits), b.verb_features.as_deref().map(bits));
        prop_assert_eq!(back.query.as_deref().map(bits), b.query.as_deref().map(bits));
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn clips_partition_the_frames(
        frames in 1usize..200,
        fps in prop_oneof![Just(1.0f64), Just(2.0), Just(2.5), Just(4.0), Just(30.0)],
        clip_length in prop_oneof![Just(1.0f64), Just(2.0), Just(0.5)],
    ) {
        let video = RawVideo {
            id: "v".into(),
            fps,
            frames: vec![FrameTensor::filled(1, 4, 0.5); frames],
        };
        let Ok(clips) = clipize(&video, clip_length) else { return Ok(()) };
        let mut next = 0;
        for (i, c) in clips.iter().enumerate() {
            prop_assert_eq!(c.index, i);
            prop_assert_eq!(c.frames.start, next);
            prop_assert!(c.frames.end > c.frames.start);
            prop_assert!(c.frames.contains(&c.representative()));
            prop_assert!(c.start < c.end && c.end <= video.duration() + 1e-9);
            next = c.frames.end;
        }
        prop_assert!(next <= frames);
        let dropped = (frames - next) as f64 / fps;
        prop_assert!(dropped < clip_length / 2.0 + 1e-9);
    }

    #[test]
    fn intra_negatives_never_overlap_the_positive(
        total in 2usize..12,
        start in 0usize..12,
        len in 1usize..6,
        seed in any::<u64>(),
    ) {
        let clip_length = 2.0;
        let start = start % total;
        let end = (start + len).min(total);
        let positive = MomentSpan::new("v", start as f64 * clip_length, end as f64 * clip_length);
        let cfg = SamplingConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match sample_intra_negative(&positive, total as f64 * clip_length, &cfg, &mut rng) {
            Ok((neg, shrunk)) => {
                prop_assert_eq!(positive.overlap(&neg), 0.0);
                prop_assert!(neg.length() > 0.0);
                prop_assert_eq!(shrunk, neg.length() < positive.length());
            }
            Err(_) => prop_assert!(start == 0 && end == total),
        }
    }

    #[test]
    fn retrieval_metrics_are_sane((gts, preds) in retrieval_case()) {
        let thresholds: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
        let m = evaluate_retrieval(&preds, &gts, &thresholds).unwrap();
        let recalls: Vec<f64> = RECALL_THRESHOLDS.iter().map(|&t| m.recall(t).unwrap()).collect();
        prop_assert!(recalls.windows(2).all(|w| w[0] >= w[1]), "{:?}", recalls);
        let maps: Vec<f64> = m.map.iter().map(|p| p.1).collect();
        prop_assert!(maps.windows(2).all(|w| w[0] >= w[1] - 1e-9), "{:?}", maps);
        let max = maps.iter().copied().fold(0.0, f64::max);
        prop_assert!(m.avg_map <= max + 1e-9);
        for v in recalls.iter().chain(&maps).chain([&m.miou, &m.avg_map]) {
            prop_assert!((0.0..=100.0 + 1e-9).contains(v), "{}", v);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn annotations_round_trip_through_disk(set in annotation_set()) {
        let set = AnnotationSet {
            records: set
                .records
                .into_iter()
                .map(|mut r| {
                    if let Some(s) = r.saliency_scores.as_mut() {
                        for v in s.iter_mut() {
                            *v = (*v).clamp(set.scale.min, set.scale.max);
                        }
                    }
                    r
                })
                .collect(),
            ..set
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        write_annotations(&path, &set).unwrap();
        let back = parse_annotations(&std::fs::read_to_string(&path).unwrap()).unwrap();
        prop_assert_eq!(back, set);
    }

    #[test]
    fn checkpoints_reserialize_identically(seed in any::<u64>(), epoch in 0usize..1000, scale in 1e-300f64..1e3) {
        let cfg = RunConfig {
            encoder: common::tiny_encoder(),
            ..Default::default()
        };
        let mut model = Model::new(&cfg.model()).unwrap();
        common::randomize_trainables(&mut model, scale, seed);
        model.trainables.video.bias = Matrix::from_fn(1, 8, |_, c| if c == 0 { -0.0 } else { c as f64 * 4.9e-324 });
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        Checkpoint::from_model(&model, &cfg, epoch).save(&a).unwrap();
        let loaded = Checkpoint::load(&a).unwrap();
        loaded.save(&b).unwrap();
        prop_assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        prop_assert_eq!(loaded.restore().unwrap().trainables, model.trainables);
    }
}
