//! Small dense models, SGD, data partitioning and the comparison baselines.

pub mod baselines;
pub mod data;
pub mod model;
pub mod partition;
pub mod tasks;
pub mod train;

use thiserror::Error;

pub use baselines::{centralized_baseline, fl_baseline, train_alone, EarlyStopping, FlConfig};
pub use data::Dataset;
pub use model::{Architecture, ModelParams, OutputKind};
pub use partition::{partition_data, Partition};
pub use tasks::{make_task, TaskId, TaskParams, TaskSpec};
pub use train::{evaluate, local_train, Evaluation, MetricKind, TrainConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("expected {expected} weights, got {got}")]
    WeightCount { expected: usize, got: usize },
    #[error("weight {0} is not finite")]
    NonFiniteWeight(usize),
    #[error("training diverged in epoch {epoch}: loss {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },
    #[error("invalid training configuration")]
    InvalidTrainConfig,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} outside {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("cannot partition: {0}")]
    Partition(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("i/o: {0}")]
    Io(String),
}
