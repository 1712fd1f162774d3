//! Desk-scale two-stage adaptation experiment: a small next-token model
//! trained by continued pretraining on a synthetic target language, then
//! fine-tuned on instruction-style pairs.

pub mod config;
pub mod corpus;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod train;

use thiserror::Error;

use crate::metrics::MetricError;
use crate::tensor_store::StoreError;

pub use config::{
    EvalConfig, ExperimentConfig, LossMask, MixtureEntry, Precision, Stage, StagePlan, SyntheticCorpusSpec, TaskKind,
    ToyModelConfig,
};
pub use corpus::{generate_corpus, Dataset, Sample, SyntheticWorld};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use model::{param_specs, ToyModel};
pub use pipeline::{run_pipeline, EvalBundle, PipelineOutput};
pub use train::{train_stage, StepLog, TrainOutcome};

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bundle error: {0}")]
    Bundle(String),
    #[error("{stage} training produced non-finite loss {loss} at step {step}")]
    NonFiniteLoss { stage: String, step: usize, loss: f64 },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
