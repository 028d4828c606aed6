//! The per-quadruple training objective and its gradient w.r.t. every
//! trainable tensor.
//!
//! A batch loss is the mean of per-quadruple losses: `T_q` is fixed for the
//! batch, so each quadruple is evaluated on its own tape.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::aci::{consistency_loss_with_grad, VerbExtractor};
use crate::autograd::{Tape, Var};
use crate::ctpl::SweepOutput;
use crate::data::clips::span_clip_range;
use crate::data::{load_annotations, AnnotationRecord, AnnotationSet, MomentSpan, RawVideo, VideoStore};
use crate::encoders::AttentionStack;
use crate::error::{Error, Result};
use crate::model::{Model, PreparedQuery, PreparedVideo, Stream};
use crate::pretext::{
    contrastive_loss_with_grad, moment_representation, moment_representation_backward, total_loss,
    triplet_loss_with_grad, LossWeights, MomentQuadruple,
};
use crate::tensor::Matrix;

/// Frozen-side inputs for every record of a dataset.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub records: Vec<AnnotationRecord>,
    /// Aligned with `records`.
    pub queries: Vec<PreparedQuery>,
    pub videos: BTreeMap<String, PreparedVideo>,
    pub clip_length: f64,
}

impl PreparedDataset {
    pub fn new(
        model: &Model,
        annotations: &AnnotationSet,
        videos: &[RawVideo],
        clip_length: f64,
        extractor: &dyn VerbExtractor,
    ) -> Result<Self> {
        let by_id: HashMap<&str, &RawVideo> = videos.iter().map(|v| (v.id.as_str(), v)).collect();
        let mut needed: Vec<&str> = annotations.records.iter().map(|r| r.vid.as_str()).collect();
        needed.sort_unstable();
        needed.dedup();
        let prepared = needed
            .par_iter()
            .map(|id| {
                let raw = by_id
                    .get(id)
                    .ok_or_else(|| Error::input(format!("annotations reference unknown video `{id}`")))?;
                model.prepare_video(raw, clip_length, None)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(model, annotations, prepared, clip_length, extractor)
    }

    /// Reads `<dir>/annotations.jsonl` and `<dir>/videos/*.actv`.
    pub fn load(model: &Model, dir: &Path, clip_length: f64, extractor: &dyn VerbExtractor) -> Result<Self> {
        let annotations = load_annotations(&dir.join("annotations.jsonl"))?;
        let store = VideoStore::new(dir.join("videos"));
        let mut ids: Vec<&str> = annotations.records.iter().map(|r| r.vid.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        let prepared = ids
            .par_iter()
            .map(|id| model.prepare_video(&store.load(id)?, clip_length, None))
            .collect::<Result<Vec<_>>>()?;
        info!(
            "loaded {} records over {} videos from {}",
            annotations.records.len(),
            ids.len(),
            dir.display()
        );
        Self::assemble(model, &annotations, prepared, clip_length, extractor)
    }

    fn assemble(
        model: &Model,
        annotations: &AnnotationSet,
        prepared: Vec<PreparedVideo>,
        clip_length: f64,
        extractor: &dyn VerbExtractor,
    ) -> Result<Self> {
        let queries = annotations
            .records
            .iter()
            .map(|r| model.prepare_query(&r.query, r.verb_index, extractor))
            .collect::<Result<Vec<_>>>()?;
        let videos: BTreeMap<String, PreparedVideo> = prepared.into_iter().map(|v| (v.id.clone(), v)).collect();
        for r in &annotations.records {
            let v = &videos[&r.vid];
            if (v.duration - r.duration).abs() > clip_length / 2.0 {
                return Err(Error::input(format!(
                    "record {} says video `{}` lasts {} s but its frames last {} s",
                    r.qid, r.vid, r.duration, v.duration
                )));
            }
        }
        Ok(Self {
            records: annotations.records.clone(),
            queries,
            videos,
            clip_length,
        })
    }

    pub fn video(&self, id: &str) -> Result<&PreparedVideo> {
        self.videos
            .get(id)
            .ok_or_else(|| Error::input(format!("unknown video `{id}`")))
    }

    pub fn num_videos(&self) -> usize {
        self.videos.len()
    }

    /// `(record, window)` pairs; one training sample each.
    pub fn samples(&self) -> Vec<(usize, usize)> {
        self.records
            .iter()
            .enumerate()
            .flat_map(|(i, r)| (0..r.relevant_windows.len()).map(move |w| (i, w)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_tri: f64,
    pub l_con: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l_ce.is_finite() && self.l_tri.is_finite() && self.l_con.is_finite() && self.l_total.is_finite()
    }

    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut out = LossBreakdown::default();
        for l in items {
            out.l_ce += l.l_ce / n;
            out.l_tri += l.l_tri / n;
            out.l_con += l.l_con / n;
            out.l_total += l.l_total / n;
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct QuadrupleOutcome {
    pub losses: LossBreakdown,
    /// In [`crate::model::Trainables::visit`] order.
    pub grads: Vec<Matrix>,
}

/// Gradient seeds keyed by tape node, summed when a node is hit twice.
#[derive(Default)]
struct Seeds(BTreeMap<usize, (Var, Matrix)>);

impl Seeds {
    fn add(&mut self, var: Var, grad: Matrix) {
        self.0
            .entry(var.index())
            .and_modify(|(_, g)| g.add_assign(&grad))
            .or_insert((var, grad));
    }

    fn into_vec(self) -> Vec<(Var, Matrix)> {
        self.0.into_values().collect()
    }
}

struct MomentFrames {
    vars: Vec<Var>,
    values: Matrix,
}

fn moment_frames(tape: &Tape, sweep: &SweepOutput, video: &PreparedVideo, span: &MomentSpan) -> MomentFrames {
    let (a, b) = span_clip_range(span, video.clip_length, video.num_clips());
    let vars = sweep.features[a..b].to_vec();
    let rows: Vec<Vec<f64>> = vars.iter().map(|&v| tape.value(v).row_vec(0)).collect();
    MomentFrames {
        vars,
        values: Matrix::from_rows(&rows),
    }
}

fn seed_moment(seeds: &mut Seeds, frames: &MomentFrames, grad: &[f64], scale: f64) {
    let g: Vec<f64> = grad.iter().map(|x| x * scale).collect();
    let per_frame = moment_representation_backward(&frames.values, &g);
    for (t, &v) in frames.vars.iter().enumerate() {
        seeds.add(v, Matrix::row_vector(per_frame.row(t)));
    }
}

fn stacks(tape: &Tape, sweeps: &[&SweepOutput]) -> (Vec<AttentionStack>, Vec<Vec<Var>>) {
    let mut stacks = Vec::new();
    let mut vars = Vec::new();
    for s in sweeps {
        for frame in &s.attention {
            stacks.push(AttentionStack::from_rows(
                frame.iter().map(|&v| tape.value(v).row_vec(0)).collect(),
            ));
            vars.push(frame.clone());
        }
    }
    (stacks, vars)
}

/// `L_ce + α1 L_tri + α2 L_con` for one quadruple, with gradients.
///
/// `batch_queries` holds `t^q` of every batch query; row `positive` is this
/// quadruple's.
pub fn quadruple_objective(
    model: &Model,
    data: &PreparedDataset,
    quad: &MomentQuadruple,
    query: &PreparedQuery,
    batch_queries: &Matrix,
    positive: usize,
    weights: &LossWeights,
) -> Result<QuadrupleOutcome> {
    let pos_video = data.video(&quad.positive.video_id)?;
    let inter_video = data.video(&quad.inter_negative.video_id)?;
    if quad.intra_negative.video_id != quad.positive.video_id {
        return Err(Error::Sampling("intra negative comes from another video".into()));
    }

    let mut tape = Tape::new();
    let image = model.backbone.image.bind(&mut tape);
    let params = model.trainables.bind(&mut tape);
    let vid_pos = model.run_stream(&mut tape, &image, &params, pos_video, Stream::Video, Some(query))?;
    let veb_pos = model.run_stream(&mut tape, &image, &params, pos_video, Stream::Verb, Some(query))?;
    let vid_inter = model.run_stream(&mut tape, &image, &params, inter_video, Stream::Video, Some(query))?;
    let veb_inter = model.run_stream(&mut tape, &image, &params, inter_video, Stream::Verb, Some(query))?;

    let vid_frames = [
        moment_frames(&tape, &vid_pos, pos_video, &quad.positive),
        moment_frames(&tape, &vid_pos, pos_video, &quad.intra_negative),
        moment_frames(&tape, &vid_inter, inter_video, &quad.inter_negative),
    ];
    let veb_frames = [
        moment_frames(&tape, &veb_pos, pos_video, &quad.positive),
        moment_frames(&tape, &veb_pos, pos_video, &quad.intra_negative),
        moment_frames(&tape, &veb_inter, inter_video, &quad.inter_negative),
    ];
    let vid_reps = vid_frames
        .iter()
        .map(|m| moment_representation(&m.values))
        .collect::<Result<Vec<_>>>()?;
    let veb_reps = veb_frames
        .iter()
        .map(|m| moment_representation(&m.values))
        .collect::<Result<Vec<_>>>()?;

    let tri = triplet_loss_with_grad(
        [&vid_reps[0], &vid_reps[1], &vid_reps[2]],
        [&veb_reps[0], &veb_reps[1], &veb_reps[2]],
        &query.query,
    )?;
    let ce = contrastive_loss_with_grad(&vid_reps[0], batch_queries, positive)?;
    let (vid_stacks, vid_vars) = stacks(&tape, &[&vid_pos, &vid_inter]);
    let (veb_stacks, veb_vars) = stacks(&tape, &[&veb_pos, &veb_inter]);
    let con = consistency_loss_with_grad(&vid_stacks, &veb_stacks)?;

    let mut seeds = Seeds::default();
    for i in 0..3 {
        seed_moment(&mut seeds, &vid_frames[i], &tri.grad_vid[i], weights.alpha1);
        seed_moment(&mut seeds, &veb_frames[i], &tri.grad_veb[i], weights.alpha1);
    }
    seed_moment(&mut seeds, &vid_frames[0], &ce.grad, 1.0);
    for (vars, grads) in [(&vid_vars, &con.grad_vid), (&veb_vars, &con.grad_veb)] {
        for (frame_vars, frame_grads) in vars.iter().zip(grads) {
            for (&v, g) in frame_vars.iter().zip(frame_grads) {
                let scaled: Vec<f64> = g.iter().map(|x| x * weights.alpha2).collect();
                seeds.add(v, Matrix::row_vector(&scaled));
            }
        }
    }

    let grads = tape.backward(&seeds.into_vec());
    Ok(QuadrupleOutcome {
        losses: LossBreakdown {
            l_ce: ce.value,
            l_tri: tri.value,
            l_con: con.value,
            l_total: total_loss(ce.value, tri.value, con.value, weights),
        },
        grads: params.collect(&tape, &grads),
    })
}
