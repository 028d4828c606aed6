//! Clip-level video features `v^V_t`.
//!
//! The bundled provider summarizes a clip with hand-built motion statistics and
//! a fixed random projection. Anything producing one `D_V` row per clip can be
//! plugged in instead, e.g. features computed offline and stored as bundles.

use std::path::PathBuf;

use rand::Rng;

use super::config::EncoderConfig;
use super::frame::FrameTensor;
use super::layers::{truncated_normal, ParamVisitor};
use crate::data::features::FeatureBundle;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub trait VideoFeatureProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// One row per clip, `L x D_V`.
    fn clip_features(&self, video_id: &str, clips: &[Vec<FrameTensor>]) -> Result<Matrix>;
}

/// Statistics of one clip:
/// - per-patch, per-channel mean over frames and pixels (`C·N_p`)
/// - per-patch, per-channel mean absolute difference between consecutive frames (`C·N_p`)
/// - per-channel mean and standard deviation over the whole clip (`2C`)
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticsVideoEncoder {
    pub config: EncoderConfig,
    /// `stat_len x D_V`
    pub projection: Matrix,
}

impl StatisticsVideoEncoder {
    pub fn stat_len(config: &EncoderConfig) -> usize {
        2 * config.channels * config.num_patches() + 2 * config.channels
    }

    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        let len = Self::stat_len(config);
        Self {
            config: config.clone(),
            projection: truncated_normal(rng, len, config.video_dim, 1.0 / (len as f64).sqrt()),
        }
    }

    pub fn visit(&self, v: &mut dyn ParamVisitor) {
        v.visit("video.projection", &self.projection);
    }

    pub fn statistics(&self, frames: &[FrameTensor]) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if frames.is_empty() {
            return Err(Error::input("clip has no frames"));
        }
        if let Some(f) = frames
            .iter()
            .find(|f| f.channels() != cfg.channels || f.size() != cfg.image_size)
        {
            return Err(Error::config(format!(
                "clip frame is {}x{}x{}, expected {}x{}x{}",
                f.channels(),
                f.size(),
                f.size(),
                cfg.channels,
                cfg.image_size,
                cfg.image_size
            )));
        }
        let c = cfg.channels;
        let np = cfg.num_patches();
        let grid = cfg.grid();
        let p = cfg.patch_size;
        let patch_area = (p * p) as f64;
        let n = frames.len() as f64;

        let mut mean = vec![0.0; c * np];
        let mut diff = vec![0.0; c * np];
        for ch in 0..c {
            for y in 0..cfg.image_size {
                for x in 0..cfg.image_size {
                    let cell = ch * np + (y / p) * grid + x / p;
                    for (i, f) in frames.iter().enumerate() {
                        let v = f.get(ch, y, x);
                        mean[cell] += v;
                        if i > 0 {
                            diff[cell] += (v - frames[i - 1].get(ch, y, x)).abs();
                        }
                    }
                }
            }
        }
        for m in &mut mean {
            *m /= n * patch_area;
        }
        if frames.len() > 1 {
            for d in &mut diff {
                *d /= (n - 1.0) * patch_area;
            }
        }

        let pixels = (cfg.image_size * cfg.image_size) as f64 * n;
        let mut channel_stats = Vec::with_capacity(2 * c);
        for ch in 0..c {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for f in frames {
                let plane =
                    &f.pixels()[ch * cfg.image_size * cfg.image_size..(ch + 1) * cfg.image_size * cfg.image_size];
                sum += plane.iter().sum::<f64>();
                sq += plane.iter().map(|v| v * v).sum::<f64>();
            }
            let m = sum / pixels;
            channel_stats.push(m);
            channel_stats.push((sq / pixels - m * m).max(0.0).sqrt());
        }

        let mut out = mean;
        out.extend(diff);
        out.extend(channel_stats);
        Ok(out)
    }

    pub fn clip_feature(&self, frames: &[FrameTensor]) -> Result<Vec<f64>> {
        let stats = self.statistics(frames)?;
        Ok(Matrix::row_vector(&stats).matmul(&self.projection).row_vec(0))
    }
}

impl VideoFeatureProvider for StatisticsVideoEncoder {
    fn dim(&self) -> usize {
        self.config.video_dim
    }

    fn clip_features(&self, _video_id: &str, clips: &[Vec<FrameTensor>]) -> Result<Matrix> {
        let rows = clips
            .iter()
            .map(|clip| self.clip_feature(clip))
            .collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_rows(&rows))
    }
}

/// Reads `v^V` rows from `<dir>/<video_id>.actp` feature bundles.
#[derive(Debug, Clone)]
pub struct PrecomputedVideoFeatures {
    pub dir: PathBuf,
    pub dim: usize,
}

impl PrecomputedVideoFeatures {
    pub fn path_for(&self, video_id: &str) -> PathBuf {
        self.dir.join(format!("{video_id}.actp"))
    }
}

impl VideoFeatureProvider for PrecomputedVideoFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn clip_features(&self, video_id: &str, clips: &[Vec<FrameTensor>]) -> Result<Matrix> {
        let path = self.path_for(video_id);
        if !path.exists() {
            return Err(Error::MissingFeatures {
                video_id: video_id.to_string(),
                path,
            });
        }
        let bundle = FeatureBundle::load(&path)?;
        if bundle.video_dim != self.dim {
            return Err(Error::format(format!(
                "{} stores video features of dim {}, expected {}",
                path.display(),
                bundle.video_dim,
                self.dim
            )));
        }
        if bundle.num_clips != clips.len() {
            return Err(Error::format(format!(
                "{} holds {} clips, video `{video_id}` has {}",
                path.display(),
                bundle.num_clips,
                clips.len()
            )));
        }
        Ok(Matrix::from_vec(
            bundle.num_clips,
            bundle.video_dim,
            bundle.video_features.iter().map(|&v| f64::from(v)).collect(),
        ))
    }
}
