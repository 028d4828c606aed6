//! Action-cue-injected temporal prompt learning on a frozen toy image tower.
//!
//! The crate provides the frozen encoders ([`encoders`]), video- and
//! verb-guided prompts with their attention consistency loss ([`aci`]),
//! attention-selected temporal prompts ([`ctpl`]), the moment-query pretext
//! losses ([`pretext`]), dataset plumbing ([`data`]) and the fine-tuning,
//! extraction and evaluation pipeline ([`pipeline`]).

pub mod aci;
pub mod autograd;
pub mod ctpl;
pub mod data;
pub mod encoders;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod pretext;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, ParamGroup, PromptMode, Stream, Trainables};
pub use tensor::Matrix;
