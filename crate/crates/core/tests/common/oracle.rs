//! Explicit-loop reference implementations and fuzz drivers comparing them
//! with the library.

use actprompt_core::aci::consistency_loss;
use actprompt_core::encoders::AttentionStack;
use actprompt_core::pipeline::metrics::{average_precision, ranking_average_precision, window_iou};
use actprompt_core::pretext::{contrastive_loss, moment_representation, triplet_loss};
use actprompt_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Largest scaled difference seen over a fuzz run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparison {
    pub cases: usize,
    pub worst: f64,
}

impl Comparison {
    fn new() -> Self {
        Self { cases: 0, worst: 0.0 }
    }

    fn add(&mut self, got: f64, expected: f64) {
        let err = (got - expected).abs() / (1.0 + got.abs().max(expected.abs()));
        self.worst = if err.is_nan() {
            f64::INFINITY
        } else {
            self.worst.max(err)
        };
    }

    fn case(&mut self) {
        self.cases += 1;
    }
}

pub fn consistency(cases: usize) -> Comparison {
    let mut out = Comparison::new();
    let mut r = rng(1);
    for _ in 0..cases {
        let frames = r.random_range(1..5);
        let layers = r.random_range(1..4);
        let patches = r.random_range(1..9);
        let stack = |r: &mut ChaCha8Rng| {
            (0..frames)
                .map(|_| {
                    AttentionStack::from_rows(
                        (0..layers)
                            .map(|_| (0..patches).map(|_| r.random_range(0.0..1.0)).collect())
                            .collect(),
                    )
                })
                .collect::<Vec<_>>()
        };
        let vid = stack(&mut r);
        let veb = stack(&mut r);
        let mut expected = 0.0;
        for t in 0..frames {
            let mut per_frame = 0.0;
            for l in 0..layers {
                let mut sq = 0.0;
                for i in 0..patches {
                    let d = vid[t].rows[l][i] - veb[t].rows[l][i];
                    sq += d * d;
                }
                per_frame += sq / patches as f64;
            }
            expected += per_frame;
        }
        expected /= frames as f64;
        out.add(consistency_loss(&vid, &veb).unwrap(), expected);
        out.case();
    }
    out
}

pub fn triplet(cases: usize) -> Comparison {
    let mut out = Comparison::new();
    let mut r = rng(2);
    for _ in 0..cases {
        let d = r.random_range(2..10);
        let q = vector(&mut r, d);
        let vid: Vec<Vec<f64>> = (0..3).map(|_| vector(&mut r, d)).collect();
        let veb: Vec<Vec<f64>> = (0..3).map(|_| vector(&mut r, d)).collect();
        let prob = |reps: &[Vec<f64>]| {
            let mut denom = 0.0;
            for m in reps {
                denom += cos(m, &q).exp();
            }
            cos(&reps[0], &q).exp() / denom
        };
        let expected = -(prob(&vid) * prob(&veb)).ln();
        let got = triplet_loss([&vid[0], &vid[1], &vid[2]], [&veb[0], &veb[1], &veb[2]], &q).unwrap();
        out.add(got, expected);
        out.case();
    }
    out
}

pub fn contrastive(cases: usize) -> Comparison {
    let mut out = Comparison::new();
    let mut r = rng(3);
    for _ in 0..cases {
        let d = r.random_range(2..10);
        let b = r.random_range(1..8);
        let v = vector(&mut r, d);
        let queries: Vec<Vec<f64>> = (0..b).map(|_| vector(&mut r, d)).collect();
        let pos = r.random_range(0..b);
        let mut denom = 0.0;
        for q in &queries {
            denom += cos(&v, q).exp();
        }
        let expected = -(cos(&v, &queries[pos]).exp() / denom).ln();
        out.add(
            contrastive_loss(&v, &Matrix::from_rows(&queries), pos).unwrap(),
            expected,
        );
        out.case();
    }
    out
}

pub fn moment(cases: usize) -> Comparison {
    let mut out = Comparison::new();
    let mut r = rng(4);
    for _ in 0..cases {
        let n = r.random_range(1..7);
        let d = r.random_range(1..10);
        let frames: Vec<Vec<f64>> = (0..n).map(|_| vector(&mut r, d)).collect();
        let mut expected = vec![0.0; d];
        for f in &frames {
            let mut norm = 0.0;
            for x in f {
                norm += x * x;
            }
            let norm = norm.sqrt();
            for i in 0..d {
                expected[i] += f[i] / norm;
            }
        }
        for e in &mut expected {
            *e /= n as f64;
        }
        let got = moment_representation(&Matrix::from_rows(&frames)).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            out.add(*g, *e);
        }
        out.case();
    }
    out
}

/// Counts 1 ms cells.
fn grid_iou(a: (i64, i64), b: (i64, i64)) -> f64 {
    let lo = a.0.min(b.0);
    let hi = a.1.max(b.1);
    let (mut inter, mut union) = (0u64, 0u64);
    for cell in lo..hi {
        let in_a = cell >= a.0 && cell < a.1;
        let in_b = cell >= b.0 && cell < b.1;
        inter += (in_a && in_b) as u64;
        union += (in_a || in_b) as u64;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn iou(cases: usize) -> Comparison {
    let mut out = Comparison::new();
    let mut r = rng(5);
    for _ in 0..cases {
        let span = |r: &mut ChaCha8Rng| {
            let s = r.random_range(0..20_000i64);
            (s, s + r.random_range(1..10_000i64))
        };
        let a = span(&mut r);
        let b = span(&mut r);
        let got = window_iou(
            [a.0 as f64 / 1000.0, a.1 as f64 / 1000.0],
            [b.0 as f64 / 1000.0, b.1 as f64 / 1000.0],
        );
        out.add(got, grid_iou(a, b));
        out.case();
    }
    out
}

fn plain_iou(a: [f64; 2], b: [f64; 2]) -> f64 {
    let inter = if a[1] < b[1] { a[1] } else { b[1] } - if a[0] > b[0] { a[0] } else { b[0] };
    if inter <= 0.0 {
        return 0.0;
    }
    inter / ((a[1] - a[0]) + (b[1] - b[0]) - inter)
}

/// Greedy matching, then for every ground truth `j` the best precision at any
/// cutoff that has recovered at least `j` of them.
pub fn ap_oracle(ranked: &[[f64; 3]], gts: &[[f64; 2]], threshold: f64) -> f64 {
    let mut used = vec![false; gts.len()];
    let mut tp_at = Vec::new();
    let mut tp = 0;
    for p in ranked {
        let mut best = None;
        let mut best_iou = -1.0;
        for (j, g) in gts.iter().enumerate() {
            let o = plain_iou([p[0], p[1]], *g);
            if !used[j] && o >= threshold && o > best_iou {
                best = Some(j);
                best_iou = o;
            }
        }
        if let Some(j) = best {
            used[j] = true;
            tp += 1;
        }
        tp_at.push(tp);
    }
    let mut ap = 0.0;
    for needed in 1..=gts.len() {
        let mut best = 0.0;
        for (k, &hits) in tp_at.iter().enumerate() {
            let precision = hits as f64 / (k + 1) as f64;
            if hits >= needed && precision > best {
                best = precision;
            }
        }
        ap += best / gts.len() as f64;
    }
    ap
}

pub fn retrieval_ap(cases: usize) -> Comparison {
    let mut out = Comparison::new();
    let mut r = rng(6);
    for case in 0..cases {
        let n_gt = r.random_range(1..4);
        let gts: Vec<[f64; 2]> = (0..n_gt)
            .map(|_| {
                let s = r.random_range(0..20) as f64 * 2.0;
                [s, s + r.random_range(1..6) as f64 * 2.0]
            })
            .collect();
        let n_pred = r.random_range(0..7);
        let mut preds: Vec<[f64; 3]> = (0..n_pred)
            .map(|_| {
                let s = r.random_range(0..20) as f64 * 2.0;
                [s, s + r.random_range(1..6) as f64 * 2.0, r.random_range(0.0..1.0)]
            })
            .collect();
        if case % 3 == 0 {
            preds.extend(gts.iter().map(|g| [g[0], g[1], r.random_range(0.0..1.0)]));
        }
        preds.sort_by(|a, b| b[2].total_cmp(&a[2]));
        for t in [0.3, 0.5, 0.7] {
            out.add(average_precision(&preds, &gts, t), ap_oracle(&preds, &gts, t));
        }
        out.case();
    }
    out
}

pub fn ranking_ap(cases: usize) -> Comparison {
    let mut out = Comparison::new();
    let mut r = rng(7);
    for _ in 0..cases {
        let n = r.random_range(1..12);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0..5) as f64).collect();
        let mut relevant: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        relevant[r.random_range(0..n)] = true;
        // Rank by score, ties by index, then average precision@k over relevant ranks.
        let mut order: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for j in 0..n - 1 - i {
                let (a, b) = (order[j], order[j + 1]);
                if scores[b] > scores[a] || (scores[b] == scores[a] && b < a) {
                    order.swap(j, j + 1);
                }
            }
        }
        let positives = relevant.iter().filter(|&&x| x).count();
        let mut expected = 0.0;
        for k in 0..n {
            if relevant[order[k]] {
                let hits = (0..=k).filter(|&i| relevant[order[i]]).count();
                expected += hits as f64 / (k + 1) as f64 / positives as f64;
            }
        }
        out.add(ranking_average_precision(&scores, &relevant), expected);
        out.case();
    }
    out
}
