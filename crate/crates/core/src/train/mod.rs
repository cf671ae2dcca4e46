//! Training loop, evaluation cadence, model selection, checkpoints and
//! metrics.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod metrics;
mod trainer;

pub use checkpoint::{Checkpoint, TrainState};
pub use config::{EvalMode, OptimConfig, Paths, RunConfig, TrainConfig};
pub use eval::{
    argmax, eval_interval, evaluate, predict_logits, score_logits, DatasetEvaluator, EvalResult, Evaluator,
    ScriptedEvaluator,
};
pub use metrics::{read_metrics, MetricsLog, MetricsRow};
pub use trainer::{
    artifact_paths, epoch_order, train, RunSummary, StepStats, StopReason, Trainer, BEST_FILE, LAST_FILE,
    MANIFEST_FILE, METRICS_FILE,
};
