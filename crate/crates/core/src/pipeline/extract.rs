//! Per-clip feature extraction into [`FeatureBundle`]s.

use serde::{Deserialize, Serialize};

use crate::data::FeatureBundle;
use crate::error::{Error, Result};
use crate::model::{Model, PreparedQuery, PreparedVideo, Stream};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum ExtractMode {
    /// Video-guided features only; these are the downstream image features.
    #[default]
    #[serde(rename = "vid")]
    Vid,
    /// Also the verb-guided stream, which needs the query.
    #[serde(rename = "vid+veb")]
    VidVeb,
}

impl std::str::FromStr for ExtractMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vid" => Ok(Self::Vid),
            "vid+veb" => Ok(Self::VidVeb),
            other => Err(Error::Usage(format!(
                "unknown extraction mode `{other}` (expected vid or vid+veb)"
            ))),
        }
    }
}

fn to_f32(m: &Matrix) -> Vec<f32> {
    m.as_slice().iter().map(|&v| v as f32).collect()
}

/// Deterministic in the model and video: identical inputs give byte-identical bundles.
pub fn extract(
    model: &Model,
    video: &PreparedVideo,
    mode: ExtractMode,
    query: Option<&PreparedQuery>,
) -> Result<FeatureBundle> {
    if mode == ExtractMode::VidVeb && query.is_none() {
        return Err(Error::Usage("vid+veb extraction needs a query".into()));
    }
    let vid = model.clip_features(video, Stream::Video, query)?;
    let veb = match mode {
        ExtractMode::Vid => None,
        ExtractMode::VidVeb => Some(model.clip_features(video, Stream::Verb, query)?),
    };
    let bundle = FeatureBundle {
        video_id: video.id.clone(),
        num_clips: video.num_clips(),
        embed_dim: model.config.encoder.embed_dim,
        video_dim: model.config.encoder.video_dim,
        image_features: to_f32(&vid),
        video_features: to_f32(&video.clip_features),
        verb_features: veb.as_ref().map(to_f32),
        query: query.map(|q| q.query.iter().map(|&v| v as f32).collect()),
    };
    bundle.validate()?;
    Ok(bundle)
}
