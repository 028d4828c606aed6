//! Run configuration, read from flat `section.key = value` lines.
//!
//! ```text
//! # comments are allowed
//! train.learning_rate = 0.1
//! train.batch_size = 4
//! temporal.T = 1
//! prompt.mode = "vanilla"
//! verb_extractor = "annotation"
//! ```
//!
//! The syntax is TOML restricted to dotted keys, so strings are quoted.
//! Unknown keys are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aci::VerbExtractorKind;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParamGroup, PromptMode};
use crate::pretext::{InterNegativeSource, LossWeights, SamplingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalSection {
    /// Window radius.
    #[serde(rename = "T")]
    pub radius: usize,
    /// `0` means the embedding width.
    pub hidden_width: usize,
    pub enabled: bool,
}

impl Default for TemporalSection {
    fn default() -> Self {
        Self {
            radius: 1,
            hidden_width: 0,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub mode: PromptMode,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for PromptSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            mode: m.prompt_mode,
            init_std: m.coupler_init_std,
            seed: m.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub min_gap_clips: usize,
    pub inter_negative: InterNegativeSource,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let s = SamplingConfig::default();
        Self {
            min_gap_clips: s.min_gap_clips,
            inter_negative: s.inter_negative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Clip length in seconds.
    pub clip_length: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { clip_length: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Fraction of the samples seen per epoch; epochs walk disjoint chunks.
    pub data_ratio: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    /// Groups left at their initial values.
    pub freeze: Vec<ParamGroup>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 10,
            data_ratio: 0.1,
            batch_size: 32,
            momentum: 0.0,
            seed: 0,
            freeze: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.data_ratio > 0.0 && self.data_ratio <= 1.0) {
            return Err(Error::config(format!(
                "train.data_ratio must be in (0, 1], got {}",
                self.data_ratio
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(format!(
                "train.learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::config(format!(
                "train.momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::config(format!(
                "train.batch_size must be at least 2 so batches can supply inter-video negatives, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// IoU thresholds averaged into "avg mAP".
    pub map_thresholds: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            map_thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub temporal: TemporalSection,
    pub prompt: PromptSection,
    pub verb_extractor: VerbExtractorKind,
    pub loss: LossWeights,
    pub sampling: SamplingSection,
    pub data: DataSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if !(self.data.clip_length.is_finite() && self.data.clip_length > 0.0) {
            return Err(Error::config(format!(
                "data.clip_length must be positive, got {}",
                self.data.clip_length
            )));
        }
        if self.eval.map_thresholds.is_empty() || self.eval.map_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::config(
                "eval.map_thresholds must be a non-empty list of values in [0, 1]",
            ));
        }
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            radius: self.temporal.radius,
            hidden_width: self.temporal.hidden_width,
            use_temporal: self.temporal.enabled,
            prompt_mode: self.prompt.mode,
            coupler_init_std: self.prompt.init_std,
            seed: self.prompt.seed,
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            clip_length: self.data.clip_length,
            min_gap_clips: self.sampling.min_gap_clips,
            inter_negative: self.sampling.inter_negative,
        }
    }
}
