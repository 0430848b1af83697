//! Multi-tenant GPU cluster simulation with deadline-aware elastic allocation.

mod catalog;
mod schedule;
mod trace;

pub use catalog::{
    build_curves, Catalog, CatalogEntry, CurveMode, CurvePoint, CurveSet, ThroughputCurve,
};
pub use schedule::{
    compare_modes, metrics, run_schedule, run_schedule_guided, ClusterConfig, Epoch, JobOutcome,
    JobState, Metrics, ScheduleResult, DEFAULT_TOTAL_GPUS,
};
pub use trace::{
    load_trace, read_trace, synthetic_trace, write_trace, Job, TraceParams, LAMBDA_RANGE,
};
