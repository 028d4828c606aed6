//! Moment-query pretext objectives: quadruple sampling, moment
//! representations, the triplet-ranking and contrastive losses, and their
//! weighted total.
//!
//! Each loss comes in a value-only form and a `*_with_grad` form returning the
//! gradient w.r.t. its vector inputs; the trainer feeds those gradients back
//! into the encoder tape.

use log::warn;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::annotations::{AnnotationRecord, MomentSpan};
use crate::data::clips::{clip_count, span_clip_range};
use crate::error::{Error, Result};
use crate::tensor::{dot, l2_norm, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 5.0,
            alpha2: 200.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1.is_finite() && self.alpha2.is_finite() && self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(Error::config(format!(
                "loss weights must be finite and nonnegative, got alpha1={} alpha2={}",
                self.alpha1, self.alpha2
            )));
        }
        Ok(())
    }
}

/// `L_ce + α1 L_tri + α2 L_con`
pub fn total_loss(l_ce: f64, l_tri: f64, l_con: f64, weights: &LossWeights) -> f64 {
    l_ce + weights.alpha1 * l_tri + weights.alpha2 * l_con
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InterNegativeSource {
    /// An annotated window of another video in the batch.
    #[default]
    Annotated,
    /// Any clip-aligned span of another video in the batch.
    Random,
}

impl std::str::FromStr for InterNegativeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annotated" => Ok(Self::Annotated),
            "random" => Ok(Self::Random),
            other => Err(Error::config(format!("unknown inter-negative source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub clip_length: f64,
    /// Shortest intra-video negative, in clips.
    pub min_gap_clips: usize,
    pub inter_negative: InterNegativeSource,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            clip_length: 2.0,
            min_gap_clips: 1,
            inter_negative: InterNegativeSource::Annotated,
        }
    }
}

/// `(m⁺, m^intra−, m^inter−, q)`
#[derive(Debug, Clone, PartialEq)]
pub struct MomentQuadruple {
    pub qid: String,
    pub positive: MomentSpan,
    pub intra_negative: MomentSpan,
    pub inter_negative: MomentSpan,
    pub query: String,
    pub annotated_verb: Option<usize>,
    /// Set when the intra negative had to be shorter than the positive.
    pub shrunk: bool,
}

fn clip_span(video_id: &str, first: usize, len: usize, clip_length: f64, duration: f64) -> MomentSpan {
    MomentSpan {
        video_id: video_id.to_string(),
        start: first as f64 * clip_length,
        end: ((first + len) as f64 * clip_length).min(duration),
    }
}

/// Intra-video negative on the clip grid: same clip count as `positive` when
/// the untouched footage allows it, otherwise the longest span that fits.
pub fn sample_intra_negative<R: Rng + ?Sized>(
    positive: &MomentSpan,
    duration: f64,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<(MomentSpan, bool)> {
    let total = clip_count(duration, cfg.clip_length)?;
    let (a, b) = span_clip_range(positive, cfg.clip_length, total);
    let wanted = b - a;
    let longest = a.max(total - b);
    let min_len = cfg.min_gap_clips.max(1);
    if longest < min_len {
        return Err(Error::Sampling(format!(
            "moment [{}, {}] of `{}` leaves {longest} free clip(s), need {min_len}",
            positive.start, positive.end, positive.video_id
        )));
    }
    let (len, shrunk) = if longest >= wanted {
        (wanted, false)
    } else {
        warn!(
            "intra negative for [{}, {}] of `{}` shrunk from {wanted} to {longest} clip(s)",
            positive.start, positive.end, positive.video_id
        );
        (longest, true)
    };
    let mut starts: Vec<usize> = Vec::new();
    if a >= len {
        starts.extend(0..=a - len);
    }
    if total - b >= len {
        starts.extend(b..=total - len);
    }
    let first = *starts.choose(rng).expect("at least one fitting start");
    Ok((
        clip_span(&positive.video_id, first, len, cfg.clip_length, duration),
        shrunk,
    ))
}

/// Builds the quadruple for `batch[anchor]`'s `window`-th relevant window.
pub fn sample_quadruple<R: Rng + ?Sized>(
    batch: &[&AnnotationRecord],
    anchor: usize,
    window: usize,
    cfg: &SamplingConfig,
    rng: &mut R,
) -> Result<MomentQuadruple> {
    let record = batch[anchor];
    let others: Vec<&AnnotationRecord> = batch.iter().copied().filter(|r| r.vid != record.vid).collect();
    if others.is_empty() {
        return Err(Error::Sampling(format!(
            "batch holds only video `{}`; inter-video negatives need at least two videos, use a larger batch",
            record.vid
        )));
    }
    let positive = record
        .relevant_windows
        .get(window)
        .ok_or_else(|| Error::input(format!("record {} has no window {window}", record.qid)))?;
    let positive = MomentSpan {
        video_id: record.vid.clone(),
        start: positive[0],
        end: positive[1],
    };
    let (intra_negative, shrunk) = sample_intra_negative(&positive, record.duration, cfg, rng)?;

    let other = *others.choose(rng).expect("non-empty");
    let inter_negative = match cfg.inter_negative {
        InterNegativeSource::Annotated => {
            let w = other
                .relevant_windows
                .choose(rng)
                .ok_or_else(|| Error::input(format!("record {} has no windows", other.qid)))?;
            MomentSpan {
                video_id: other.vid.clone(),
                start: w[0],
                end: w[1],
            }
        }
        InterNegativeSource::Random => {
            let total = clip_count(other.duration, cfg.clip_length)?;
            let (a, b) = span_clip_range(
                &positive,
                cfg.clip_length,
                clip_count(record.duration, cfg.clip_length)?,
            );
            let len = (b - a).min(total).max(1);
            let first = rng.random_range(0..=total - len);
            clip_span(&other.vid, first, len, cfg.clip_length, other.duration)
        }
    };

    Ok(MomentQuadruple {
        qid: record.qid.clone(),
        positive,
        intra_negative,
        inter_negative,
        query: record.query.clone(),
        annotated_verb: record.verb_index,
        shrunk,
    })
}

/// Mean of the L2-normalized rows (no re-normalization).
pub fn moment_representation(frames: &Matrix) -> Result<Vec<f64>> {
    if frames.rows() == 0 {
        return Err(Error::input("moment has no frames"));
    }
    let n = frames.rows() as f64;
    let mut out = vec![0.0; frames.cols()];
    for (t, row) in frames.iter_rows().enumerate() {
        let norm = l2_norm(row);
        if norm == 0.0 {
            warn!("frame {t} of moment has zero norm; treated as zero after normalization");
            continue;
        }
        for (o, v) in out.iter_mut().zip(row) {
            *o += v / norm / n;
        }
    }
    Ok(out)
}

/// Gradient of [`moment_representation`] w.r.t. each frame row.
pub fn moment_representation_backward(frames: &Matrix, grad: &[f64]) -> Matrix {
    let n = frames.rows() as f64;
    let mut out = Matrix::zeros(frames.rows(), frames.cols());
    for t in 0..frames.rows() {
        let row = frames.row(t);
        let norm = l2_norm(row);
        if norm == 0.0 {
            continue;
        }
        let proj = dot(row, grad) / (norm * norm);
        for ((o, &x), &g) in out.row_mut(t).iter_mut().zip(row).zip(grad) {
            *o = (g - proj * x) / (norm * n);
        }
    }
    out
}

/// Cosine similarity and its gradient w.r.t. `a` (zero when `a` is zero).
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return (0.0, vec![0.0; a.len()]);
    }
    let s = dot(a, b) / (na * nb);
    let grad = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - s * x / (na * na))
        .collect();
    (s, grad)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine_with_grad(a, b).0
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Moment triples ordered `[positive, intra negative, inter negative]`.
pub type MomentTriple<'a> = [&'a [f64]; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub value: f64,
    pub grad_vid: [Vec<f64>; 3],
    pub grad_veb: [Vec<f64>; 3],
}

/// `−log(softmax₀(sim(ṽ_vid, t^q)) · softmax₀(sim(ṽ_veb, t^q)))`, each softmax over the three moments.
pub fn triplet_loss(vid: MomentTriple<'_>, veb: MomentTriple<'_>, query: &[f64]) -> Result<f64> {
    triplet_loss_with_grad(vid, veb, query).map(|l| l.value)
}

pub fn triplet_loss_with_grad(vid: MomentTriple<'_>, veb: MomentTriple<'_>, query: &[f64]) -> Result<TripletLoss> {
    if l2_norm(query) == 0.0 {
        return Err(Error::input("query representation has zero norm"));
    }
    let stream = |reps: MomentTriple<'_>| -> (f64, [Vec<f64>; 3]) {
        let sims_grads: Vec<(f64, Vec<f64>)> = reps.iter().map(|r| cosine_with_grad(r, query)).collect();
        let sims: Vec<f64> = sims_grads.iter().map(|(s, _)| *s).collect();
        let lse = log_sum_exp(&sims);
        let value = lse - sims[0];
        let grads = std::array::from_fn(|i| {
            let p = (sims[i] - lse).exp();
            let coeff = p - if i == 0 { 1.0 } else { 0.0 };
            sims_grads[i].1.iter().map(|g| g * coeff).collect()
        });
        (value, grads)
    };
    let (lv, grad_vid) = stream(vid);
    let (lb, grad_veb) = stream(veb);
    Ok(TripletLoss {
        value: lv + lb,
        grad_vid,
        grad_veb,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// `−log softmax_{positive}(sim(ṽ⁺_vid, t̃) for t̃ in the batch queries)`.
pub fn contrastive_loss(positive_moment: &[f64], queries: &Matrix, positive: usize) -> Result<f64> {
    contrastive_loss_with_grad(positive_moment, queries, positive).map(|l| l.value)
}

pub fn contrastive_loss_with_grad(
    positive_moment: &[f64],
    queries: &Matrix,
    positive: usize,
) -> Result<ContrastiveLoss> {
    if positive >= queries.rows() {
        return Err(Error::input(format!(
            "positive index {positive} outside batch of {}",
            queries.rows()
        )));
    }
    let sims_grads: Vec<(f64, Vec<f64>)> = queries
        .iter_rows()
        .map(|q| cosine_with_grad(positive_moment, q))
        .collect();
    let sims: Vec<f64> = sims_grads.iter().map(|(s, _)| *s).collect();
    let lse = log_sum_exp(&sims);
    let mut grad = vec![0.0; positive_moment.len()];
    for (j, (s, g)) in sims_grads.iter().enumerate() {
        let coeff = (s - lse).exp() - if j == positive { 1.0 } else { 0.0 };
        for (o, v) in grad.iter_mut().zip(g) {
            *o += coeff * v;
        }
    }
    Ok(ContrastiveLoss {
        value: lse - sims[positive],
        grad,
    })
}
