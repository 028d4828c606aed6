//! Dataset ingestion, clip materialization, raw frame storage, feature
//! bundles and the synthetic motion generator.

pub mod annotations;
pub mod clips;
pub mod features;
pub mod synthetic;
pub mod video;

pub use annotations::{
    load_annotations, write_annotations, AnnotationRecord, AnnotationSet, MomentSpan, SaliencyScale,
};
pub use clips::{clip_count, clipize, span_clip_range, Clip};
pub use features::FeatureBundle;
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};
pub use video::{RawVideo, VideoStore};
