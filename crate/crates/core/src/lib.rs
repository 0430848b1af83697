//! Simulation of 3D-parallel transformer training: operator and task graphs,
//! a profile-backed cost database, a discrete-event iteration simulator, plan
//! exploration and a multi-tenant cluster scheduler.

pub mod cluster;
pub mod costdb;
pub mod engine;
pub mod error;
pub mod explorer;
pub mod model;
pub mod opgraph;

pub use cluster::{
    build_curves, compare_modes, run_schedule, Catalog, ClusterConfig, CurveMode, Job,
    ScheduleResult,
};
pub use costdb::{CostDatabase, CostModel, CostOptions, FlopsConvention, OperatorSignature};
pub use engine::{simulate_iteration, SimResult, Stream, TaskGraph};
pub use error::{Error, PlanError, Result};
pub use explorer::{
    chinchilla_effective, chinchilla_naive, pareto_and_pick, sweep, IterationEstimator, PlanSpace,
    Simulator, SweepBounds, SweepPoint, TrainingLength,
};
pub use model::{HardwareSpec, ModelConfig, ParallelPlan, Schedule, TrainingRun};
pub use opgraph::{build_operator_graph, lower_to_tasks, GraphScope, OpKind, OperatorGraph};
