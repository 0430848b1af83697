use std::path::PathBuf;

use thiserror::Error;

use crate::costdb::OperatorSignature;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Why a parallelization plan cannot be used with a model.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("parallel degrees must be >= 1 (t={t}, d={d}, p={p})")]
    ZeroDegree { t: u32, d: u32, p: u32 },
    #[error("tensor degree {t} does not divide heads {heads} and hidden size {hidden}")]
    TensorSplit { t: u32, heads: u32, hidden: u32 },
    #[error("pipeline degree {p} exceeds layer count {layers}")]
    TooManyStages { p: u32, layers: u32 },
    #[error("d*b = {per_step} does not divide global batch {batch}")]
    BatchSplit { per_step: u64, batch: u64 },
    #[error("micro-batch size and gradient bucket count must be >= 1")]
    ZeroBatchOrBuckets,
    #[error("estimated {needed} bytes per GPU exceeds capacity {capacity}")]
    OutOfMemory { needed: u64, capacity: u64 },
    #[error("pipeline degree {p} does not divide layer count {layers}")]
    UnevenStages { p: u32, layers: u32 },
    #[error("tensor degree {t} exceeds GPUs per node {per_node}")]
    TensorAcrossNodes { t: u32, per_node: u32 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model config: {0}")]
    InvalidModel(String),
    #[error("invalid hardware spec: {0}")]
    InvalidHardware(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(#[from] PlanError),
    #[error("no profile entry for {0} and analytical fallback is disabled")]
    MissingProfile(OperatorSignature),
    #[error("no intra-node {kind} profile for group size {group}")]
    MissingCollective { kind: String, group: u32 },
    #[error("{kind} is a communication operator; use the communication model")]
    NotComputation { kind: String },
    #[error("profile {path}: {message}")]
    ProfileParse { path: PathBuf, message: String },
    #[error("profile validation failed:\n  {}", .0.join("\n  "))]
    ProfileInvalid(Vec<String>),
    #[error("dependency cycle: task {task} ({label}) never became ready")]
    Cycle { task: usize, label: String },
    #[error("graph has {0} tasks, brute-force oracle is limited to {1}")]
    OracleTooLarge(usize, usize),
    #[error("trace line {line}: {message}")]
    Trace { line: usize, message: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
