//! SGD training with step decay, evaluation and checkpoints.

mod checkpoint;
mod config;
mod eval;
mod metrics;
mod run;

pub use checkpoint::{encode_config, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use eval::{dataset_logits, evaluate, in_top_k, score_logits, EvalReport};
pub use metrics::{metrics_csv, parse_metrics_csv, EpochMetrics, METRICS_HEADER};
pub use run::{resume, train, TrainEvent};
