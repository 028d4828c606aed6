//! Held-out triplet ordering: how often the positive moment's video-guided
//! representation is closer to the query than both negatives.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::clips::span_clip_range;
use crate::data::{AnnotationRecord, MomentSpan};
use crate::error::{Error, Result};
use crate::model::{Model, Stream};
use crate::pipeline::objective::PreparedDataset;
use crate::pretext::{cosine, moment_representation, sample_quadruple, SamplingConfig};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TripletAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl TripletAccuracy {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// One quadruple per record (first window), negatives drawn with a fixed
/// seed using the whole dataset as the batch.
pub fn triplet_accuracy(
    model: &Model,
    data: &PreparedDataset,
    sampling: &SamplingConfig,
    seed: u64,
) -> Result<TripletAccuracy> {
    let features: BTreeMap<&str, Matrix> = data
        .videos
        .par_iter()
        .map(|(id, v)| Ok((id.as_str(), model.clip_features(v, Stream::Video, None)?)))
        .collect::<Result<_>>()?;
    let rep = |span: &MomentSpan| -> Result<Vec<f64>> {
        let f = &features[span.video_id.as_str()];
        let video = data.video(&span.video_id)?;
        let (a, b) = span_clip_range(span, video.clip_length, f.rows());
        moment_representation(&f.slice_rows(a, b))
    };
    let records: Vec<&AnnotationRecord> = data.records.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TripletAccuracy { correct: 0, total: 0 };
    for (i, query) in data.queries.iter().enumerate() {
        let quad = match sample_quadruple(&records, i, 0, sampling, &mut rng) {
            Ok(q) => q,
            Err(Error::Sampling(_)) => continue,
            Err(e) => return Err(e),
        };
        let pos = cosine(&rep(&quad.positive)?, &query.query);
        let intra = cosine(&rep(&quad.intra_negative)?, &query.query);
        let inter = cosine(&rep(&quad.inter_negative)?, &query.query);
        out.total += 1;
        if pos > intra.max(inter) {
            out.correct += 1;
        }
    }
    Ok(out)
}
