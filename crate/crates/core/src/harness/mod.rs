//! Training, checkpointing, evaluation, inference and attention inspection.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod infer;
pub mod train;
pub mod visualize;

pub use checkpoint::{load_model, Checkpoint};
pub use config::{DataConfig, EvalConfig, Precision, RunConfig, SourceSpec, TrainConfig};
pub use data::{CorpusSource, GeneratedSource, MemorySource, SampleSource, Subset};
pub use eval::{evaluate_detection, evaluate_localization, predict_items, robustness, DetectionMode, EvalSummary, Predictions, RobustnessReport};
pub use infer::{infer, infer_bytes, save_prediction};
pub use train::{train, EpochSummary, StepLog, TrainObserver, TrainOutcome, Trainer};
pub use visualize::{visualize_attention, AttentionMap};
