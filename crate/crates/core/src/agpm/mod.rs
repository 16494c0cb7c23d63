//! Adaptive log data-path selection: locality counter buffers, metric
//! extraction, the reason classifier and the period controller.

mod buffer;
mod classify;
mod metrics;
mod period;
mod selector;
mod size;

pub use buffer::{AgpmBuffer, AgpmEntry, BufferGeometry, Level, Way, MARK_TEMPORAL, MARK_VALID, WAYS};
pub use classify::{
    classify_reason, read_metrics_csv, reason_to_path, reason_to_type, GpuType, MetricsCsvError, MetricsRow, PathDecision, Reason,
};
pub use metrics::{compute_metrics, running_metrics, LocalityMetrics, MetricFormula};
pub use period::{cwppr_sample, update_threshold, PeriodRecord, PeriodState, INITIAL_THRESHOLD, MIN_THRESHOLD};
pub use selector::{Agpm, AgpmOptions, PathChange, PeriodSummary};
pub use size::{size_report, SizeConfig, SizeReport};
