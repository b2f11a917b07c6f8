//! Optimizers, the training loop, per-epoch history and evaluation metrics.

mod history;
mod metrics;
mod optim;
mod trainer;

pub use history::{
    read_history_csv, write_history_csv, EpochRecord, HistoryError, TrainHistory, HISTORY_HEADER,
};
pub use metrics::{
    confusion_matrix, f1_consistent, f1_score, ClassMetrics, MetricsError, MetricsReport,
};
pub use optim::{adam_step, sgd_step, AdamHyper, Optimizer, OptimizerKind};
pub use trainer::{
    align_labels, evaluate, predict, prepare, train, TrainConfig, TrainError,
};
