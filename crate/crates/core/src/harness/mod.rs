//! Configuration, checkpoints, training, evaluation and the gradient
//! audit behind the command-line tool.

mod checkpoint;
mod config;
mod eval;
mod gradcheck;
mod metrics;
mod model;
mod train;

pub use checkpoint::{adam_config, restore_store, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Seeds, TrainConfig, SEED_ENV};
pub use eval::{evaluate, generate_targets, transfer_grid, write_transfer_grid, EvalReport};
pub use gradcheck::{run_gradcheck, SuiteResult, SIZE as GRADCHECK_SIZE, SUITES};
pub use metrics::{l1, ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use model::{stack, Batch, Generated, LpNet, PreparedPair, Which};
pub use train::{prepare_pairs, read_log, train, LogRecord, TrainSummary, Trainer, CHECKPOINT_FILE, LOG_FILE};
