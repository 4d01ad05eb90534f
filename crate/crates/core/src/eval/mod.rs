//! Threshold and ranking metrics, fold aggregation with t-intervals, the
//! cross-validation driver and a synthetic dataset generator.

mod aggregate;
mod cv;
mod metrics;
mod synth;

pub use aggregate::{aggregate_folds, t_multiplier_95, CrossValReport, MetricSummary, METRIC_NAMES};
pub use cv::{
    cross_validate, fold_init_seed, fold_train_seed, run_fold, CvOutcome, FoldOutcome, HeadConfig,
    TestPrediction,
};
pub use metrics::{
    auc, basic_metrics, confusion, mcc, BasicMetrics, ConfusionCounts, MetricsReport,
    DECISION_THRESHOLD,
};
pub use synth::{make_synthetic_dataset, SynthConfig};
