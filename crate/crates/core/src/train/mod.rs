//! Optimization, evaluation, checkpoints and the experiment matrix.

mod adam;
pub mod checkpoint;
mod matrix;
mod model;
mod spearman;
mod trainer;

pub use adam::{adam_step, Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint_config, save_checkpoint};
pub use matrix::{matrix_csv, run_experiment_matrix, MatrixEntry, MatrixRow};
pub use model::{derive_seed, forward_clip_var, forward_pipeline, prepare_clips, Model, ModelConfig, Predictor};
pub use spearman::{average_ranks, pearson, spearman};
pub use trainer::{
    evaluate, metrics_csv, smoothed_train_loss, train, train_step, EpochRecord, EvalReport,
    Observer, Precision, TrainConfig, TrainOutcome,
};
