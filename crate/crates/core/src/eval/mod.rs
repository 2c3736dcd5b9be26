//! Confusion matrices, precision/recall/F1, ROC curves and report files.

pub mod confusion;
pub mod metrics;
pub mod report;
pub mod roc;

pub use confusion::{confusion, ConfusionMatrix, RowNormalized};
pub use metrics::{class_metrics, ClassMetrics, PerClass, Weighted};
pub use report::{emit_report, emit_summary, evaluate, ExperimentReport};
pub use roc::{experiment_roc_summary, micro_roc_summary, roc, roc_from_scores, RocCurve, RocMode, RocPoint, RocSummary};
