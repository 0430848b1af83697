use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use super::{CommGroup, GraphScope, OpKind, OperatorGraph, OperatorNode};
use crate::costdb::{CollectiveKind, CommRequest, CommScope, CostModel, OperatorSignature};
use crate::engine::{Stream, TaskGraph, TaskGraphBuilder, TaskNode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoweringStats {
    pub operators: usize,
    /// Distinct computation signatures, each resolved once.
    pub db_lookups: usize,
    /// Distinct collective requests, each timed once.
    pub comm_queries: usize,
    pub tasks: usize,
    pub edges: usize,
}

#[derive(Debug, Clone)]
pub struct Lowered {
    pub tasks: TaskGraph,
    pub stats: LoweringStats,
}

/// Resolved kernels (label id, seconds) of one computation signature or the
/// single task of one collective.
struct CostEntry {
    kernels: Vec<(u32, f64)>,
    total: f64,
}

struct Resolver<'a> {
    g: &'a OperatorGraph,
    cost: &'a dyn CostModel,
    entries: Vec<CostEntry>,
    per_kind: [Option<u32>; 12],
    by_sig: HashMap<OperatorSignature, u32>,
    by_comm: HashMap<CommRequest, u32>,
    scopes: HashMap<CommGroup, CommScope>,
    gpus_per_node: u32,
}

impl Resolver<'_> {
    fn spans_nodes(&self, group: CommGroup) -> bool {
        let ranks = group.ranks(&self.g.layout());
        let first = ranks[0] / self.gpus_per_node;
        ranks.iter().any(|r| r / self.gpus_per_node != first)
    }

    /// In representative scope one operator stands for the same operator of
    /// every replica, so it is charged inter-node if any of them crosses a
    /// node boundary.
    fn scope(&mut self, group: CommGroup) -> CommScope {
        let key = match (self.g.scope, group) {
            (GraphScope::Full, g) => g,
            (GraphScope::Representative, CommGroup::Tensor { stage, .. }) => {
                CommGroup::Tensor { dp: 0, stage }
            }
            (GraphScope::Representative, CommGroup::Data { stage, .. }) => {
                CommGroup::Data { tp: 0, stage }
            }
            (GraphScope::Representative, CommGroup::Pipe { from, to, .. }) => CommGroup::Pipe {
                tp: 0,
                dp: 0,
                from,
                to,
            },
        };
        if let Some(&scope) = self.scopes.get(&key) {
            return scope;
        }
        let layout = self.g.layout();
        let crosses = match (self.g.scope, key) {
            (GraphScope::Full, g) => self.spans_nodes(g),
            (_, CommGroup::Tensor { stage, .. }) => {
                (0..layout.d).any(|dp| self.spans_nodes(CommGroup::Tensor { dp, stage }))
            }
            (_, CommGroup::Data { stage, .. }) => {
                (0..layout.t).any(|tp| self.spans_nodes(CommGroup::Data { tp, stage }))
            }
            (_, CommGroup::Pipe { from, to, .. }) => (0..layout.d).any(|dp| {
                (0..layout.t).any(|tp| self.spans_nodes(CommGroup::Pipe { tp, dp, from, to }))
            }),
        };
        let scope = if crosses {
            CommScope::InterNode
        } else {
            CommScope::IntraNode
        };
        self.scopes.insert(key, scope);
        scope
    }

    fn entry(&mut self, node: &OperatorNode, b: &mut TaskGraphBuilder) -> Result<u32> {
        if node.kind.is_comm() {
            return self.comm_entry(node, b);
        }
        let per_layer = node.kind != OpKind::WeightUpdate;
        if per_layer {
            if let Some(e) = self.per_kind[node.kind as usize] {
                return Ok(e);
            }
        }
        let layers = if per_layer {
            1
        } else {
            self.g.stage_layers(node.stage).len() as u32
        };
        let sig = OperatorSignature::new(node.kind, &self.g.model, &self.g.plan, layers);
        let e = match self.by_sig.get(&sig) {
            Some(&e) => e,
            None => {
                let kernels = self.cost.resolve(&sig)?;
                let kernels: Vec<(u32, f64)> = kernels
                    .iter()
                    .map(|k| (b.intern(&k.name), k.duration))
                    .collect();
                let total = kernels.iter().map(|k| k.1).sum();
                let e = self.entries.len() as u32;
                self.entries.push(CostEntry { kernels, total });
                self.by_sig.insert(sig, e);
                e
            }
        };
        if per_layer {
            self.per_kind[node.kind as usize] = Some(e);
        }
        Ok(e)
    }

    fn comm_entry(&mut self, node: &OperatorNode, b: &mut TaskGraphBuilder) -> Result<u32> {
        let info = node.comm.expect("communication node carries comm info");
        let kind = node.kind.collective().expect("communication kind");
        let scope = self.scope(info.group);
        let nic_sharing = match kind {
            CollectiveKind::SendRecv => self.g.plan.tensor,
            CollectiveKind::AllReduce => 1,
        };
        let req = CommRequest {
            kind,
            bytes: info.bytes,
            group: info.group_size,
            scope,
            nic_sharing,
        };
        if let Some(&e) = self.by_comm.get(&req) {
            return Ok(e);
        }
        let seconds = self.cost.comm_time(&req)?;
        let label = b.intern(&node.kind.to_string());
        let e = self.entries.len() as u32;
        self.entries.push(CostEntry {
            kernels: vec![(label, seconds)],
            total: seconds,
        });
        self.by_comm.insert(req, e);
        Ok(e)
    }
}

/// Expands every operator into tasks: computation operators into their kernel
/// chains on the compute stream, collectives into one task per materialized
/// participant on the comm stream.
///
/// Each stream issues its tasks in order of contention-free earliest start,
/// then dependency depth, then id.
pub fn lower_to_tasks(g: &OperatorGraph, cost: &dyn CostModel) -> Result<Lowered> {
    let n = g.nodes.len();
    let mut b = TaskGraphBuilder::with_capacity(n + n / 4, g.edges.len() + n / 4);
    let mut resolver = Resolver {
        g,
        cost,
        entries: Vec::new(),
        per_kind: [None; 12],
        by_sig: HashMap::new(),
        by_comm: HashMap::new(),
        scopes: HashMap::new(),
        gpus_per_node: cost.hardware().gpus_per_node.max(1),
    };
    let mut entry_of = Vec::with_capacity(n);
    for node in &g.nodes {
        entry_of.push(resolver.entry(node, &mut b)?);
    }

    // Operator-level CSR and Kahn pass for earliest starts and depths.
    let mut offsets = vec![0u32; n + 1];
    let mut indeg = vec![0u32; n];
    for &(u, v) in &g.edges {
        offsets[u as usize + 1] += 1;
        indeg[v as usize] += 1;
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut fill = offsets.clone();
    let mut succ = vec![0u32; g.edges.len()];
    for &(u, v) in &g.edges {
        succ[fill[u as usize] as usize] = v;
        fill[u as usize] += 1;
    }
    let mut est = vec![0.0f64; n];
    let mut depth = vec![0u32; n];
    let mut queue: VecDeque<u32> = (0..n as u32).filter(|&u| indeg[u as usize] == 0).collect();
    let mut seen = 0;
    while let Some(u) = queue.pop_front() {
        seen += 1;
        let finish = est[u as usize] + resolver.entries[entry_of[u as usize] as usize].total;
        for &v in &succ[offsets[u as usize] as usize..offsets[u as usize + 1] as usize] {
            let v = v as usize;
            est[v] = est[v].max(finish);
            depth[v] = depth[v].max(depth[u as usize] + 1);
            indeg[v] -= 1;
            if indeg[v] == 0 {
                queue.push_back(v as u32);
            }
        }
    }
    if seen < n {
        let stuck = indeg
            .iter()
            .position(|&d| d > 0)
            .expect("cycle leaves a pending operator");
        return Err(Error::Cycle {
            task: stuck,
            label: g.nodes[stuck].kind.to_string(),
        });
    }

    // Emit tasks; entry/exit ranges per operator.
    let mut first_task = Vec::with_capacity(n + 1);
    let mut task_est: Vec<f64> = Vec::with_capacity(n + n / 4);
    for (u, node) in g.nodes.iter().enumerate() {
        first_task.push(b.len() as u32);
        let entry = &resolver.entries[entry_of[u] as usize];
        if node.kind.is_comm() {
            let (label, seconds) = entry.kernels[0];
            for device in g.participants(node) {
                b.push(TaskNode {
                    device,
                    stream: Stream::Comm,
                    duration: seconds,
                    label,
                    origin: u as u32,
                });
                task_est.push(est[u]);
            }
        } else {
            let mut t = est[u];
            for &(label, seconds) in &entry.kernels {
                b.push(TaskNode {
                    device: node.gpu,
                    stream: Stream::Compute,
                    duration: seconds,
                    label,
                    origin: u as u32,
                });
                task_est.push(t);
                t += seconds;
            }
        }
    }
    first_task.push(b.len() as u32);
    let is_comm: Vec<bool> = g.nodes.iter().map(|n| n.kind.is_comm()).collect();
    let exits = |u: usize| {
        let (a, z) = (first_task[u], first_task[u + 1]);
        if is_comm[u] {
            a..z
        } else {
            z.saturating_sub(1).max(a)..z
        }
    };
    let entries = |u: usize| {
        let (a, z) = (first_task[u], first_task[u + 1]);
        if is_comm[u] {
            a..z
        } else {
            a..(a + 1).min(z)
        }
    };
    for &(u, v) in &g.edges {
        for x in exits(u as usize) {
            for y in entries(v as usize) {
                b.add_edge(x, y);
            }
        }
    }
    // Chain the kernels within each computation operator.
    for u in 0..n {
        if !is_comm[u] {
            for x in first_task[u]..first_task[u + 1].saturating_sub(1) {
                b.add_edge(x, x + 1);
            }
        }
    }

    let origin_depth: Vec<u32> = {
        let mut v = vec![0u32; task_est.len()];
        for u in 0..n {
            for x in first_task[u]..first_task[u + 1] {
                v[x as usize] = depth[u];
            }
        }
        v
    };
    let tasks = b.build_with_order(|&x, &y| {
        let (x, y) = (x as usize, y as usize);
        task_est[x]
            .total_cmp(&task_est[y])
            .then(origin_depth[x].cmp(&origin_depth[y]))
            .then(x.cmp(&y))
    })?;
    let stats = LoweringStats {
        operators: n,
        db_lookups: resolver.by_sig.len(),
        comm_queries: resolver.by_comm.len(),
        tasks: tasks.len(),
        edges: tasks.num_edges(),
    };
    Ok(Lowered { tasks, stats })
}
