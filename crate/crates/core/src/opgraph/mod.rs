//! Operator-granularity execution graphs.
//!
//! A graph holds one node per layer-level operator (forward/backward MHA and
//! FFN blocks, embedding, LM head, weight update) plus the communication
//! operators that 3D parallelism inserts: a tensor-parallel all-reduce after
//! every MHA/FFN block, point-to-point transfers at pipeline stage
//! boundaries, and bucketed data-parallel gradient all-reduces. Intra-GPU
//! ordering edges encode the GPipe or 1F1B pipeline schedule.
//!
//! Graphs come in two scopes. [`GraphScope::Full`] materializes every GPU.
//! [`GraphScope::Representative`] keeps one tensor-parallel rank of one
//! data-parallel replica per stage; since all ranks in a tensor group and all
//! replicas run identical programs, it yields the same iteration time at a
//! fraction of the size.

mod build;
mod dump;
mod lower;
mod validate;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use build::{
    add_schedule_edges, build_operator_graph, build_operator_graph_with, program_order, Direction,
};
pub use dump::{graph_json, topological_summary};
pub use lower::{lower_to_tasks, Lowered, LoweringStats};
pub use validate::{validate_graph, Diagnostic};

use crate::costdb::CollectiveKind;
use crate::model::{ModelConfig, ParallelPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    FwdEmbedding,
    #[serde(rename = "FwdMHA")]
    FwdMha,
    #[serde(rename = "FwdFFN")]
    FwdFfn,
    #[serde(rename = "FwdLMHead")]
    FwdLmHead,
    #[serde(rename = "BwdLMHead")]
    BwdLmHead,
    #[serde(rename = "BwdFFN")]
    BwdFfn,
    #[serde(rename = "BwdMHA")]
    BwdMha,
    BwdEmbedding,
    WeightUpdate,
    #[serde(rename = "AllReduceTP")]
    AllReduceTp,
    #[serde(rename = "AllReduceDP")]
    AllReduceDp,
    #[serde(rename = "SendRecvPP")]
    SendRecvPp,
}

impl OpKind {
    pub fn is_comm(self) -> bool {
        matches!(
            self,
            OpKind::AllReduceTp | OpKind::AllReduceDp | OpKind::SendRecvPp
        )
    }

    pub fn is_forward_compute(self) -> bool {
        matches!(
            self,
            OpKind::FwdEmbedding | OpKind::FwdMha | OpKind::FwdFfn | OpKind::FwdLmHead
        )
    }

    pub fn is_backward_compute(self) -> bool {
        matches!(
            self,
            OpKind::BwdLmHead | OpKind::BwdFfn | OpKind::BwdMha | OpKind::BwdEmbedding
        )
    }

    pub fn collective(self) -> Option<CollectiveKind> {
        match self {
            OpKind::AllReduceTp | OpKind::AllReduceDp => Some(CollectiveKind::AllReduce),
            OpKind::SendRecvPp => Some(CollectiveKind::SendRecv),
            _ => None,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OpKind::FwdEmbedding => "FwdEmbedding",
            OpKind::FwdMha => "FwdMHA",
            OpKind::FwdFfn => "FwdFFN",
            OpKind::FwdLmHead => "FwdLMHead",
            OpKind::BwdLmHead => "BwdLMHead",
            OpKind::BwdFfn => "BwdFFN",
            OpKind::BwdMha => "BwdMHA",
            OpKind::BwdEmbedding => "BwdEmbedding",
            OpKind::WeightUpdate => "WeightUpdate",
            OpKind::AllReduceTp => "AllReduceTP",
            OpKind::AllReduceDp => "AllReduceDP",
            OpKind::SendRecvPp => "SendRecvPP",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphScope {
    Full,
    #[default]
    Representative,
}

/// Megatron-style rank order: tensor rank fastest, then data, then pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankLayout {
    pub t: u32,
    pub d: u32,
    pub p: u32,
}

impl RankLayout {
    pub fn of(plan: &ParallelPlan) -> Self {
        RankLayout {
            t: plan.tensor,
            d: plan.data,
            p: plan.pipeline,
        }
    }

    pub fn rank(&self, tp: u32, dp: u32, stage: u32) -> u32 {
        tp + self.t * (dp + self.d * stage)
    }

    /// `(tp, dp, stage)` of a global rank.
    pub fn coords(&self, rank: u32) -> (u32, u32, u32) {
        (
            rank % self.t,
            (rank / self.t) % self.d,
            rank / (self.t * self.d),
        )
    }
}

/// The logical participants of a communication operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommGroup {
    /// All tensor ranks of one stage of one replica.
    Tensor { dp: u32, stage: u32 },
    /// One tensor rank of one stage across all replicas.
    Data { tp: u32, stage: u32 },
    /// A stage-boundary transfer.
    Pipe {
        tp: u32,
        dp: u32,
        from: u32,
        to: u32,
    },
}

impl CommGroup {
    pub fn ranks(&self, layout: &RankLayout) -> Vec<u32> {
        match *self {
            CommGroup::Tensor { dp, stage } => {
                (0..layout.t).map(|tp| layout.rank(tp, dp, stage)).collect()
            }
            CommGroup::Data { tp, stage } => {
                (0..layout.d).map(|dp| layout.rank(tp, dp, stage)).collect()
            }
            CommGroup::Pipe { tp, dp, from, to } => {
                vec![layout.rank(tp, dp, from), layout.rank(tp, dp, to)]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommInfo {
    pub bytes: u64,
    pub group_size: u32,
    pub group: CommGroup,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorNode {
    pub id: u32,
    pub kind: OpKind,
    /// Executing rank; for collectives, the lowest participating rank.
    pub gpu: u32,
    pub stage: u32,
    pub micro_batch: Option<u32>,
    /// Decoder layer for per-layer operators.
    pub layer: Option<u32>,
    /// Gradient bucket index for data-parallel all-reduces (0 = deepest).
    pub bucket: Option<u32>,
    pub comm: Option<CommInfo>,
}

impl OperatorNode {
    pub fn comm_bytes(&self) -> u64 {
        self.comm.map_or(0, |c| c.bytes)
    }

    pub fn comm_group_size(&self) -> u32 {
        self.comm.map_or(0, |c| c.group_size)
    }
}

/// Head and tail operator of one forward or backward unit (one micro-batch on
/// one stage of one materialized replica).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct UnitEnds {
    pub head: u32,
    pub tail: u32,
}

#[derive(Debug, Clone)]
pub struct OperatorGraph {
    pub model: ModelConfig,
    pub plan: ParallelPlan,
    pub scope: GraphScope,
    pub nodes: Vec<OperatorNode>,
    pub edges: Vec<(u32, u32)>,
    stage_layers: Vec<Range<u32>>,
    bucket_layers: Vec<Vec<Range<u32>>>,
    replicas: Vec<(u32, u32)>,
    units: Vec<UnitEnds>,
    weight_updates: Vec<u32>,
    scheduled: bool,
}

impl OperatorGraph {
    pub fn layout(&self) -> RankLayout {
        RankLayout::of(&self.plan)
    }

    pub fn num_micro_batches(&self) -> u32 {
        self.plan.num_micro_batches() as u32
    }

    /// Decoder layers owned by a pipeline stage.
    pub fn stage_layers(&self, stage: u32) -> Range<u32> {
        self.stage_layers[stage as usize].clone()
    }

    pub fn layer_range(&self, node: &OperatorNode) -> Range<u32> {
        self.stage_layers(node.stage)
    }

    /// Gradient buckets of a stage, deepest first.
    pub fn buckets(&self, stage: u32) -> &[Range<u32>] {
        &self.bucket_layers[stage as usize]
    }

    /// `(tp, dp)` coordinates of the materialized replicas.
    pub fn replicas(&self) -> &[(u32, u32)] {
        &self.replicas
    }

    pub fn is_materialized(&self, rank: u32) -> bool {
        let (tp, dp, _) = self.layout().coords(rank);
        match self.scope {
            GraphScope::Full => true,
            GraphScope::Representative => tp == 0 && dp == 0,
        }
    }

    /// Materialized ranks that execute a node.
    pub fn participants(&self, node: &OperatorNode) -> Vec<u32> {
        match &node.comm {
            None => vec![node.gpu],
            Some(info) => {
                let layout = self.layout();
                info.group
                    .ranks(&layout)
                    .into_iter()
                    .filter(|&r| self.is_materialized(r))
                    .collect()
            }
        }
    }

    pub fn add_edge(&mut self, from: u32, to: u32) {
        self.edges.push((from, to));
    }

    pub fn is_scheduled(&self) -> bool {
        self.scheduled
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    pub(crate) fn unit_index(&self, stage: u32, mb: u32, dir: Direction, replica: usize) -> usize {
        let m = self.num_micro_batches() as usize;
        ((stage as usize * m + mb as usize) * 2 + dir as usize) * self.replicas.len() + replica
    }

    pub(crate) fn unit(&self, stage: u32, mb: u32, dir: Direction, replica: usize) -> UnitEnds {
        self.units[self.unit_index(stage, mb, dir, replica)]
    }

    pub(crate) fn weight_update(&self, stage: u32, replica: usize) -> u32 {
        self.weight_updates[stage as usize * self.replicas.len() + replica]
    }
}

/// Splits `0..total` into `parts` contiguous ranges, earlier ranges taking
/// the remainder.
pub(crate) fn split_even(range: Range<u32>, parts: u32) -> Vec<Range<u32>> {
    let total = range.end - range.start;
    let parts = parts.min(total).max(1);
    let base = total / parts;
    let extra = total % parts;
    let mut out = Vec::with_capacity(parts as usize);
    let mut start = range.start;
    for i in 0..parts {
        let len = base + u32::from(i < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}
