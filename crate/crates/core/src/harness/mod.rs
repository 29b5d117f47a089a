//! Run configuration, datasets, training, evaluation, checkpoints and
//! attention heatmaps.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod heatmap;
pub mod toy;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{RunConfig, Task};
pub use dataset::{load_dataset, load_split};
pub use eval::{decide, evaluate, evaluate_checkpoint, EvalMode, EvalReport};
pub use heatmap::{attention_heatmap, Heatmap};
pub use train::{threads_from_env, MetricsRow, Trainer};
