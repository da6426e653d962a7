//! Experiment engine: single-form baselines, off-line and on-line
//! cross-form mimicking, evaluation, fusion, checkpoints and run files.

mod checkpoint;
mod config;
mod data;
mod engine;
mod fusion;
mod metrics;
mod optim;
mod run;

pub use checkpoint::{params_hash, Checkpoint, CheckpointMeta, HeadMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Seeds, TrainConfig};
pub use data::{load_splits, save_splits, split_paths, FormSplit, PreparedData, TEST_FILE, TRAIN_FILE};
pub use engine::{
    evaluate, init_checkpoint, map_seeds, train_acfl_offline, train_acfl_offline_on,
    train_acfl_online, train_acfl_online_on, train_sfrl, train_sfrl_on, EvalResult, RunOutput,
};
pub use fusion::{fuse_streams, StreamSet};
pub use metrics::{
    per_class_csv, per_class_report, ClassAccuracy, ClassReport, EpochRecord, FormEval,
    ImportanceRecord, ReportRow, RunMetrics, HARD_CLASSES,
};
pub use optim::{OptimizerSettings, OptimizerState};
pub use run::*;
