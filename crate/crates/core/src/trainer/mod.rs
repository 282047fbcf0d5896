//! Optimisation, metrics and the sequential cross-regional protocol.

mod metrics;
mod optimizer;
mod sequence;
mod train;

pub use metrics::{auc_score, evaluate, write_forgetting_curves, CurveRow, Metrics};
pub use optimizer::{optimizer_step, OptimizerState};
pub use sequence::{
    emit_forgetting_curves, run_sequence, run_single, AverageMetrics, CheckpointMetrics, ExperimentConfig,
    MetricsReport, RegionData, RegionMetrics, SequenceOutcome, SingleOutcome, SingleReport, TaskArtifacts, TaskSummary,
    TaskTiming, Timings,
};
pub use train::{train_region, EpochRecord, NodeSplit, TrainConfig, TrainOutcome, Variant};
