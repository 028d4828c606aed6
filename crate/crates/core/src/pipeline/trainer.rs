//! Fine-tuning loop: disjoint epoch chunks, per-batch quadruple sampling,
//! SGD with optional momentum on the trainables only.

use std::io::Write;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::AnnotationRecord;
use crate::error::{Error, Result};
use crate::model::{Model, ParamGroup};
use crate::pipeline::config::RunConfig;
use crate::pipeline::objective::{quadruple_objective, LossBreakdown, PreparedDataset, QuadrupleOutcome};
use crate::pipeline::sampler::disjoint_epoch_sampler;
use crate::pretext::sample_quadruple;
use crate::tensor::Matrix;

/// One telemetry line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l_ce: f64,
    pub l_tri: f64,
    pub l_con: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    /// Mean `L_total` over each epoch's steps; `None` when an epoch had no step.
    pub epoch_means: Vec<Option<f64>>,
    pub skipped_quadruples: usize,
    pub backbone_hash: String,
}

impl TrainReport {
    pub fn first_epoch_mean(&self) -> Option<f64> {
        self.epoch_means.iter().flatten().next().copied()
    }

    pub fn last_epoch_mean(&self) -> Option<f64> {
        self.epoch_means.iter().rev().flatten().next().copied()
    }
}

/// Splits an epoch's indices into batches, folding a trailing singleton into
/// the previous batch.
pub fn batches(indices: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = indices.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(last);
    }
    out
}

struct Optimizer {
    lr: f64,
    momentum: f64,
    frozen: Vec<ParamGroup>,
    velocity: Vec<Matrix>,
}

impl Optimizer {
    fn step(&mut self, model: &mut Model, grads: &[Matrix]) {
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
        }
        let mut i = 0;
        let (lr, mu) = (self.lr, self.momentum);
        let (velocity, frozen) = (&mut self.velocity, &self.frozen);
        model.trainables.visit_mut(&mut |name: &str, m: &mut Matrix| {
            let skip = ParamGroup::of(name).is_some_and(|g| frozen.contains(&g));
            let (v, g) = (&mut velocity[i], &grads[i]);
            i += 1;
            if skip {
                return;
            }
            for ((p, vel), g) in m.as_mut_slice().iter_mut().zip(v.as_mut_slice()).zip(g.as_slice()) {
                *vel = mu * *vel + g;
                *p -= lr * *vel;
            }
        });
    }
}

/// Runs one batch; returns the mean losses and gradients, or `None` when every
/// quadruple had to be skipped.
/// Mean losses and gradients of a batch (`None` if every quadruple was
/// skipped), plus the number of skipped quadruples.
type BatchOutcome = (Option<(LossBreakdown, Vec<Matrix>)>, usize);

fn batch_step(
    model: &Model,
    data: &PreparedDataset,
    config: &RunConfig,
    samples: &[(usize, usize)],
    batch: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<BatchOutcome> {
    let records: Vec<&AnnotationRecord> = batch.iter().map(|&i| &data.records[samples[i].0]).collect();
    let queries = Matrix::from_rows(
        &batch
            .iter()
            .map(|&i| data.queries[samples[i].0].query.clone())
            .collect::<Vec<_>>(),
    );
    let sampling = config.sampling();
    let mut jobs = Vec::with_capacity(batch.len());
    let mut skipped = 0;
    for (pos, &i) in batch.iter().enumerate() {
        match sample_quadruple(&records, pos, samples[i].1, &sampling, rng) {
            Ok(q) => jobs.push((pos, samples[i].0, q)),
            Err(Error::Sampling(msg)) => {
                warn!("skipping quadruple for {}: {msg}", records[pos].qid);
                skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if jobs.is_empty() {
        return Ok((None, skipped));
    }
    let outcomes = jobs
        .par_iter()
        .map(|(pos, record, quad)| {
            quadruple_objective(model, data, quad, &data.queries[*record], &queries, *pos, &config.loss)
        })
        .collect::<Result<Vec<QuadrupleOutcome>>>()?;
    let n = outcomes.len() as f64;
    let losses = LossBreakdown::mean(&outcomes.iter().map(|o| o.losses).collect::<Vec<_>>());
    let mut grads: Vec<Matrix> = outcomes[0]
        .grads
        .iter()
        .map(|g| Matrix::zeros(g.rows(), g.cols()))
        .collect();
    for o in &outcomes {
        for (acc, g) in grads.iter_mut().zip(&o.grads) {
            acc.add_assign(&g.scaled(1.0 / n));
        }
    }
    Ok((Some((losses, grads)), skipped))
}

/// Fine-tunes `model.trainables` in place. Each step's losses go to
/// `telemetry` as one JSON line.
pub fn finetune(
    model: &mut Model,
    data: &PreparedDataset,
    config: &RunConfig,
    mut telemetry: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    config.validate()?;
    if data.num_videos() < 2 {
        return Err(Error::Sampling(format!(
            "dataset holds {} video(s); inter-video negatives need at least two",
            data.num_videos()
        )));
    }
    let train = &config.train;
    let hash_before = model.backbone.hash();
    let samples = data.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    rng.set_stream(1);
    let mut optimizer = Optimizer {
        lr: train.learning_rate,
        momentum: train.momentum,
        frozen: train.freeze.clone(),
        velocity: Vec::new(),
    };
    let mut report = TrainReport {
        steps: Vec::new(),
        epoch_means: Vec::with_capacity(train.epochs),
        skipped_quadruples: 0,
        backbone_hash: hash_before.clone(),
    };
    let mut step = 0;

    for epoch in 0..train.epochs {
        let indices = disjoint_epoch_sampler(samples.len(), train.data_ratio, epoch, train.seed)?;
        let mut totals = Vec::new();
        for (b, batch) in batches(&indices, train.batch_size).iter().enumerate() {
            if batch.len() < 2 {
                warn!("epoch {epoch}: batch {b} has a single sample, skipped");
                continue;
            }
            let (result, skipped) = batch_step(model, data, config, &samples, batch, &mut rng)?;
            report.skipped_quadruples += skipped;
            let Some((losses, grads)) = result else { continue };
            if !losses.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                let qids: Vec<&str> = batch.iter().map(|&i| data.records[samples[i].0].qid.as_str()).collect();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    batch: format!("{b} [{}]", qids.join(", ")),
                });
            }
            optimizer.step(model, &grads);
            let record = StepRecord {
                epoch,
                step,
                l_ce: losses.l_ce,
                l_tri: losses.l_tri,
                l_con: losses.l_con,
                l_total: losses.l_total,
            };
            if let Some(out) = telemetry.as_deref_mut() {
                let line = serde_json::to_string(&record).map_err(|e| Error::format(e.to_string()))?;
                writeln!(out, "{line}").map_err(|e| Error::io("telemetry", e))?;
            }
            totals.push(losses.l_total);
            report.steps.push(record);
            step += 1;
        }
        let mean = (!totals.is_empty()).then(|| totals.iter().sum::<f64>() / totals.len() as f64);
        match mean {
            Some(m) => info!("epoch {epoch}: {} steps, mean L_total {m:.6}", totals.len()),
            None => warn!("epoch {epoch}: no optimization step"),
        }
        report.epoch_means.push(mean);
    }

    let hash_after = model.backbone.hash();
    if hash_after != hash_before {
        return Err(Error::format(format!(
            "backbone changed during fine-tuning ({hash_before} -> {hash_after})"
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singleton_is_folded() {
        assert_eq!(batches(&[1, 2, 3, 4, 5], 2), vec![vec![1, 2], vec![3, 4, 5]]);
        assert_eq!(batches(&[1, 2, 3, 4], 2), vec![vec![1, 2], vec![3, 4]]);
        assert_eq!(batches(&[7], 2), vec![vec![7]]);
        assert!(batches(&[], 2).is_empty());
    }
}
