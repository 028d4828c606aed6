//! Fine-tuning, extraction, evaluation and inspection.

pub mod checkpoint;
pub mod config;
pub mod extract;
pub mod inspect;
pub mod metrics;
pub mod objective;
pub mod probe;
pub mod sampler;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, TrainConfig};
pub use extract::{extract, ExtractMode};
pub use inspect::{attention_views, inspect_attention, render_grid, AttentionView};
pub use metrics::{
    average_precision, evaluate_highlight, evaluate_retrieval, iou, load_predictions, GroundingPrediction,
    HighlightMetrics, RetrievalMetrics,
};
pub use objective::{quadruple_objective, LossBreakdown, PreparedDataset, QuadrupleOutcome};
pub use probe::{triplet_accuracy, TripletAccuracy};
pub use sampler::disjoint_epoch_sampler;
pub use trainer::{finetune, StepRecord, TrainReport};
