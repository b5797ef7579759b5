//! Learning-rate schedule, two-phase pre-training, fine-tuning and the
//! hyperparameter grid search.

use std::path::PathBuf;

mod finetune;
mod pretrain;
mod schedule;
mod tasks;

pub use finetune::{
    evaluate, finetune, grid_search, prefer, task_params, FinetuneGrid, FinetuneOptions, FinetuneOutcome, GridOutcome,
    GridRow, HyperParams,
};
pub use pretrain::{pretrain, LogRecord, PretrainMeta, PretrainOptions, PretrainOutcome};
pub use schedule::{lr_at, PhaseConfig, PretrainSchedule, PHASE1_FRACTION, WARMUP_FRACTION};
pub use tasks::{
    build_eval_items, build_train_examples, default_metric, predict_records, EvalItem, InputConfig, TaskRecords,
};

use crate::encoder::{CheckpointError, EncoderError};

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] tensorcore::TensorError),
}

impl From<CheckpointError> for TrainerError {
    fn from(e: CheckpointError) -> Self {
        TrainerError::Encoder(EncoderError::Checkpoint(e))
    }
}
