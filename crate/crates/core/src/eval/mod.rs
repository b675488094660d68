//! Classification metrics, per-subgroup accuracy, error-slice discovery and
//! report files.

mod metrics;
mod report;
mod slices;
mod svg;

pub use metrics::{auroc, confusion_metrics, MetricsReport};
pub use report::{emit_report, read_reports, MethodReport, ReportFormat, REPORT_VERSION};
pub use slices::{discover_slices, subgroup_accuracy, Slice, SliceReport, SubgroupCell, SubgroupTable, UNK_LABEL};
