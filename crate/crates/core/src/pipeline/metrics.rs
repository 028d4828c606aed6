//! Grounding metrics: IoU, Recall@1, mIoU and mAP for moment retrieval; mAP
//! and HIT@1 for highlight detection. Every reported metric is a percentage.
//!
//! Predictions are JSON lines in the QVHighlights layout:
//! `{"qid": .., "pred_relevant_windows": [[start, end, score], ..], "pred_saliency_scores": [..]}`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::info;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::ctpl::argmax_lowest;
use crate::data::{AnnotationSet, MomentSpan};
use crate::error::{Error, Result};

pub const RECALL_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

/// Intersection over union of two spans (video ids are ignored).
pub fn iou(a: &MomentSpan, b: &MomentSpan) -> f64 {
    window_iou([a.start, a.end], [b.start, b.end])
}

pub fn window_iou(a: [f64; 2], b: [f64; 2]) -> f64 {
    let inter = (a[1].min(b[1]) - a[0].max(b[0])).max(0.0);
    let union = (a[1] - a[0]) + (b[1] - b[0]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    match Value::deserialize(d)? {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!(
            "expected string or number, got {other}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingPrediction {
    #[serde(deserialize_with = "string_or_number")]
    pub qid: String,
    /// `[start, end, confidence]`
    #[serde(default)]
    pub pred_relevant_windows: Vec<[f64; 3]>,
    /// One score per clip.
    #[serde(default)]
    pub pred_saliency_scores: Vec<f64>,
}

impl GroundingPrediction {
    /// Windows by descending confidence; ties keep their listed order.
    pub fn ranked(&self) -> Vec<[f64; 3]> {
        let mut w = self.pred_relevant_windows.clone();
        w.sort_by(|a, b| b[2].total_cmp(&a[2]));
        w
    }
}

pub fn parse_predictions(text: &str) -> Result<Vec<GroundingPrediction>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let p: GroundingPrediction = serde_json::from_str(l).map_err(|e| Error::Validation {
                line: i + 1,
                message: e.to_string(),
            })?;
            if let Some(w) = p
                .pred_relevant_windows
                .iter()
                .find(|w| w.iter().any(|v| !v.is_finite()) || w[0] > w[1])
            {
                return Err(Error::Validation {
                    line: i + 1,
                    message: format!("invalid predicted window {w:?}"),
                });
            }
            Ok(p)
        })
        .collect()
}

pub fn load_predictions(path: &Path) -> Result<Vec<GroundingPrediction>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text)
}

/// Greedy ActivityNet-style matching at `threshold`: each prediction, in rank
/// order, takes the unmatched ground truth it overlaps most if that IoU
/// reaches the threshold. Returns the true-positive flags.
pub fn match_predictions(ranked: &[[f64; 3]], gts: &[[f64; 2]], threshold: f64) -> Vec<bool> {
    let mut used = vec![false; gts.len()];
    ranked
        .iter()
        .map(|p| {
            let best = gts
                .iter()
                .enumerate()
                .filter(|(j, _)| !used[*j])
                .map(|(j, g)| (j, window_iou([p[0], p[1]], *g)))
                .filter(|(_, o)| *o >= threshold)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            match best {
                Some((j, _)) => {
                    used[j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// All-point interpolated AP of ranked predictions against `gts`, in [0, 1].
pub fn average_precision(ranked: &[[f64; 3]], gts: &[[f64; 2]], threshold: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let hits = match_predictions(ranked, gts, threshold);
    let n_gt = gts.len() as f64;
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    let mut tp = 0.0;
    for (k, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1.0;
        }
        recall.push(tp / n_gt);
        precision.push(tp / (k + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (1..recall.len())
        .map(|i| (recall[i] - recall[i - 1]) * precision[i])
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalMetrics {
    /// `(threshold, R1@threshold)`
    pub recall_at_1: Vec<(f64, f64)>,
    pub miou: f64,
    /// `(threshold, mAP@threshold)` for every threshold evaluated.
    pub map: Vec<(f64, f64)>,
    pub avg_map: f64,
}

impl RetrievalMetrics {
    pub fn recall(&self, threshold: f64) -> Option<f64> {
        lookup(&self.recall_at_1, threshold)
    }

    pub fn map_at(&self, threshold: f64) -> Option<f64> {
        lookup(&self.map, threshold)
    }
}

fn lookup(pairs: &[(f64, f64)], threshold: f64) -> Option<f64> {
    pairs.iter().find(|(t, _)| (t - threshold).abs() < 1e-9).map(|p| p.1)
}

fn index_predictions<'a>(
    preds: &'a [GroundingPrediction],
    gts: &AnnotationSet,
) -> Result<HashMap<&'a str, &'a GroundingPrediction>> {
    let mut out = HashMap::new();
    for p in preds {
        if gts.get(&p.qid).is_none() {
            return Err(Error::input(format!("prediction for unknown qid `{}`", p.qid)));
        }
        if out.insert(p.qid.as_str(), p).is_some() {
            return Err(Error::input(format!("duplicate prediction for qid `{}`", p.qid)));
        }
    }
    Ok(out)
}

/// Queries without a prediction count as misses.
pub fn evaluate_retrieval(
    preds: &[GroundingPrediction],
    gts: &AnnotationSet,
    avg_thresholds: &[f64],
) -> Result<RetrievalMetrics> {
    if gts.records.is_empty() {
        return Err(Error::input("no ground-truth queries"));
    }
    let by_qid = index_predictions(preds, gts)?;
    let n = gts.records.len() as f64;
    let mut map_thresholds: Vec<f64> = avg_thresholds.to_vec();
    for t in [0.5, 0.75] {
        if lookup(&map_thresholds.iter().map(|&x| (x, 0.0)).collect::<Vec<_>>(), t).is_none() {
            map_thresholds.push(t);
        }
    }
    map_thresholds.sort_by(f64::total_cmp);

    let mut recall = vec![0.0; RECALL_THRESHOLDS.len()];
    let mut miou = 0.0;
    let mut ap = vec![0.0; map_thresholds.len()];
    for record in &gts.records {
        let Some(pred) = by_qid.get(record.qid.as_str()) else {
            continue;
        };
        let ranked = pred.ranked();
        let Some(top) = ranked.first() else { continue };
        let best = record
            .relevant_windows
            .iter()
            .map(|g| window_iou([top[0], top[1]], *g))
            .fold(0.0, f64::max);
        miou += best / n;
        for (r, &t) in recall.iter_mut().zip(&RECALL_THRESHOLDS) {
            if best >= t {
                *r += 1.0 / n;
            }
        }
        for (a, &t) in ap.iter_mut().zip(&map_thresholds) {
            *a += average_precision(&ranked, &record.relevant_windows, t) / n;
        }
    }
    let avg_map = avg_thresholds
        .iter()
        .map(|&t| {
            ap[map_thresholds
                .iter()
                .position(|&x| (x - t).abs() < 1e-9)
                .expect("threshold present")]
        })
        .sum::<f64>()
        / avg_thresholds.len() as f64;
    Ok(RetrievalMetrics {
        recall_at_1: RECALL_THRESHOLDS
            .iter()
            .zip(&recall)
            .map(|(&t, &r)| (t, 100.0 * r))
            .collect(),
        miou: 100.0 * miou,
        map: map_thresholds.iter().zip(&ap).map(|(&t, &a)| (t, 100.0 * a)).collect(),
        avg_map: 100.0 * avg_map,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HighlightMetrics {
    pub map: f64,
    pub hit_at_1: f64,
    /// Queries that had saliency labels.
    pub evaluated: usize,
    /// Queries left out because none of their clips is rated "Very Good".
    pub excluded: usize,
}

/// Non-interpolated AP of `relevant` clips ranked by descending `scores`
/// (ties by clip index), in [0, 1].
pub fn ranking_average_precision(scores: &[f64], relevant: &[bool]) -> f64 {
    let positives = relevant.iter().filter(|&&r| r).count();
    if positives == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0.0;
    let mut sum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        if relevant[i] {
            hits += 1.0;
            sum += hits / (k + 1) as f64;
        }
    }
    sum / positives as f64
}

/// Positives are clips rated at the top of the declared scale.
pub fn evaluate_highlight(preds: &[GroundingPrediction], gts: &AnnotationSet) -> Result<HighlightMetrics> {
    let by_qid = index_predictions(preds, gts)?;
    let very_good = gts.scale.very_good();
    let mut map = 0.0;
    let mut hit = 0.0;
    let mut evaluated = 0;
    let mut excluded = 0;
    for record in &gts.records {
        let Some(labels) = &record.saliency_scores else {
            continue;
        };
        if let Some(bad) = labels.iter().find(|&&s| !gts.scale.contains(s)) {
            return Err(Error::input(format!(
                "qid {}: rating {bad} outside scale {}..={}",
                record.qid, gts.scale.min, gts.scale.max
            )));
        }
        let relevant: Vec<bool> = labels.iter().map(|&s| s == very_good).collect();
        if !relevant.contains(&true) {
            excluded += 1;
            continue;
        }
        let pred = by_qid
            .get(record.qid.as_str())
            .ok_or_else(|| Error::input(format!("no saliency prediction for qid `{}`", record.qid)))?;
        if pred.pred_saliency_scores.len() != labels.len() {
            return Err(Error::input(format!(
                "qid {}: {} saliency predictions for {} rated clips",
                record.qid,
                pred.pred_saliency_scores.len(),
                labels.len()
            )));
        }
        evaluated += 1;
        if relevant[argmax_lowest(&pred.pred_saliency_scores)] {
            hit += 1.0;
        }
        map += ranking_average_precision(&pred.pred_saliency_scores, &relevant);
    }
    if excluded > 0 {
        info!("{excluded} queries without a Very Good clip left out of highlight metrics");
    }
    if evaluated == 0 {
        return Err(Error::input("no query has a Very Good clip to evaluate"));
    }
    let n = evaluated as f64;
    Ok(HighlightMetrics {
        map: 100.0 * map / n,
        hit_at_1: 100.0 * hit / n,
        evaluated,
        excluded,
    })
}
