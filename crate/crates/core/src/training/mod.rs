//! Dataset ingestion, fold construction and the training loop.

mod dataset;
mod split;
mod train;

pub use dataset::{
    load_dataset, parse_dataset, DDISample, Dataset, DatasetError, Drug, Quarantined,
};
pub use split::{make_splits, SplitError, SplitMode, SplitPlan, FOLDS};
pub use train::{
    argmax, evaluate, predict_samples, train, train_from, EpochRecord, RunRecord, SelectionMetric,
    SplitSummary, TrainConfig, TrainError, TrainOutcome,
};
