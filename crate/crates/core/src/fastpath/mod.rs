//! Merge-and-conquer convolution, the non-convolutional layers and the
//! HEAR / Fast-HEAR pipelines with their level ladders.

pub mod layers;
pub mod merge;
pub mod pipeline;

use thiserror::Error;

use crate::backend::BackendError;
use crate::convolution::ConvError;
use crate::layout::LayoutError;
use crate::model::ModelError;

pub use layers::{avg_pool, global_pool, global_pool_fc, poly_activate};
pub use merge::{build_merge_spec, fast_hconv, MergeSpec};
pub use pipeline::{
    infer_encrypted, infer_lanes, model_plaintexts, run_pipeline, CompiledPipeline, EncodeOptions, EncodedModel, Mode,
    PipelineRun, PipelineSchedule, StepSpec, TraceEntry,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FastError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("model: {0}")]
    Model(String),
    #[error("merge: {0}")]
    Merge(String),
    #[error("expected {expected} {what}, got {got}")]
    Count { what: &'static str, expected: usize, got: usize },
    #[error("configuration: {0}")]
    Config(String),
    #[error("schedule error at {step}: {detail}")]
    Schedule { step: String, detail: String },
}

impl From<ModelError> for FastError {
    fn from(e: ModelError) -> Self {
        FastError::Model(e.to_string())
    }
}
