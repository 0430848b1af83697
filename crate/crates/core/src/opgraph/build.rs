use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{
    split_even, CommGroup, CommInfo, GraphScope, OpKind, OperatorGraph, OperatorNode, RankLayout,
    UnitEnds,
};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParallelPlan, Schedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward = 0,
    Backward = 1,
}

/// Order in which one stage executes its forward and backward units.
///
/// Without a pipeline (`p = 1`) there is nothing to fill or drain and both
/// schedules run each micro-batch's forward and backward back to back.
pub fn program_order(schedule: Schedule, stage: u32, p: u32, m: u32) -> Vec<(Direction, u32)> {
    use Direction::{Backward as B, Forward as F};
    let schedule = if p == 1 { Schedule::OneFOneB } else { schedule };
    match schedule {
        Schedule::GPipe => (0..m)
            .map(|i| (F, i))
            .chain((0..m).rev().map(|i| (B, i)))
            .collect(),
        Schedule::OneFOneB => {
            let warmup = (p - stage).min(m);
            let mut order: Vec<_> = (0..warmup).map(|i| (F, i)).collect();
            for j in 0..m - warmup {
                order.push((B, j));
                order.push((F, warmup + j));
            }
            order.extend((m - warmup..m).map(|i| (B, i)));
            order
        }
    }
}

/// Full-scope graph with schedule edges for `plan.schedule`.
pub fn build_operator_graph(model: &ModelConfig, plan: &ParallelPlan) -> Result<OperatorGraph> {
    build_operator_graph_with(model, plan, GraphScope::Full)
}

pub fn build_operator_graph_with(
    model: &ModelConfig,
    plan: &ParallelPlan,
    scope: GraphScope,
) -> Result<OperatorGraph> {
    let graph = build_unscheduled(model, plan, scope)?;
    add_schedule_edges(graph, plan.schedule)
}

/// Adds the intra-GPU ordering edges of `schedule` to a graph that has none yet.
pub fn add_schedule_edges(mut g: OperatorGraph, schedule: Schedule) -> Result<OperatorGraph> {
    if g.scheduled {
        return Err(Error::Config("graph already carries schedule edges".into()));
    }
    let p = g.plan.pipeline;
    let m = g.num_micro_batches();
    for stage in 0..p {
        let order = program_order(schedule, stage, p, m);
        for replica in 0..g.replicas.len() {
            for pair in order.windows(2) {
                let (da, ia) = pair[0];
                let (db, ib) = pair[1];
                // Fwd(i) -> Bwd(i) on the same stage is already a data edge.
                if da == Direction::Forward && db == Direction::Backward && ia == ib {
                    continue;
                }
                let from = g.unit(stage, ia, da, replica).tail;
                let to = g.unit(stage, ib, db, replica).head;
                g.edges.push((from, to));
            }
            if g.plan.data > 1 {
                if let Some(&(dl, il)) = order.last() {
                    let tail = g.unit(stage, il, dl, replica).tail;
                    let wu = g.weight_update(stage, replica);
                    g.edges.push((tail, wu));
                }
            }
        }
    }
    g.plan.schedule = schedule;
    g.scheduled = true;
    Ok(g)
}

/// One computation operator of a unit, with its decoder layer.
type Step = (OpKind, Option<u32>);

fn unit_steps(dir: Direction, stage: u32, p: u32, layers: Range<u32>) -> Vec<Step> {
    let mut steps = Vec::with_capacity(2 * layers.len() + 2);
    match dir {
        Direction::Forward => {
            if stage == 0 {
                steps.push((OpKind::FwdEmbedding, None));
            }
            for l in layers {
                steps.push((OpKind::FwdMha, Some(l)));
                steps.push((OpKind::FwdFfn, Some(l)));
            }
            if stage + 1 == p {
                steps.push((OpKind::FwdLmHead, None));
            }
        }
        Direction::Backward => {
            if stage + 1 == p {
                steps.push((OpKind::BwdLmHead, None));
            }
            for l in layers.rev() {
                steps.push((OpKind::BwdFfn, Some(l)));
                steps.push((OpKind::BwdMha, Some(l)));
            }
            if stage == 0 {
                steps.push((OpKind::BwdEmbedding, None));
            }
        }
    }
    steps
}

struct Builder {
    nodes: Vec<OperatorNode>,
    edges: Vec<(u32, u32)>,
}

impl Builder {
    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        kind: OpKind,
        gpu: u32,
        stage: u32,
        micro_batch: Option<u32>,
        layer: Option<u32>,
        bucket: Option<u32>,
        comm: Option<CommInfo>,
    ) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(OperatorNode {
            id,
            kind,
            gpu,
            stage,
            micro_batch,
            layer,
            bucket,
            comm,
        });
        id
    }
}

/// Deepest-first buckets over a stage's layers; larger buckets sit deeper.
fn stage_buckets(layers: Range<u32>, k: u32) -> Vec<Range<u32>> {
    let mut end = layers.end;
    split_even(0..layers.end - layers.start, k)
        .into_iter()
        .map(|part| {
            let start = end - part.len() as u32;
            let bucket = start..end;
            end = start;
            bucket
        })
        .collect()
}

fn build_unscheduled(
    model: &ModelConfig,
    plan: &ParallelPlan,
    scope: GraphScope,
) -> Result<OperatorGraph> {
    model.validate()?;
    plan.validate(model)?;
    let layout = RankLayout::of(plan);
    let (t, d, p) = plan.triple();
    let m = plan.num_micro_batches() as u32;
    let (tps, dps): (Vec<u32>, Vec<u32>) = match scope {
        GraphScope::Full => ((0..t).collect(), (0..d).collect()),
        GraphScope::Representative => (vec![0], vec![0]),
    };
    let replicas: Vec<(u32, u32)> = dps
        .iter()
        .flat_map(|&dp| tps.iter().map(move |&tp| (tp, dp)))
        .collect();
    let nrep = replicas.len();
    let stage_layers = split_even(0..model.num_layers, p);
    let bucket_layers: Vec<Vec<Range<u32>>> = stage_layers
        .iter()
        .map(|r| stage_buckets(r.clone(), plan.grad_buckets))
        .collect();

    let act_bytes = 2 * plan.micro_batch * model.seq_len as u64 * model.hidden_size as u64;
    let placeholder = UnitEnds {
        head: u32::MAX,
        tail: u32::MAX,
    };
    let mut units = vec![placeholder; p as usize * m as usize * 2 * nrep];
    let unit_index = |stage: u32, mb: u32, dir: Direction, replica: usize| {
        ((stage as usize * m as usize + mb as usize) * 2 + dir as usize) * nrep + replica
    };
    let mut weight_updates = Vec::with_capacity(p as usize * nrep);
    let mut b = Builder {
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    // Forward sends out of the previous stage, by (mb, replica).
    let mut inbound_sends: Vec<u32> = Vec::new();

    for stage in 0..p {
        let layers = stage_layers[stage as usize].clone();
        let first_layer = layers.start;
        // Gradient producers per replica per local layer, over all micro-batches.
        let mut grads: Vec<Vec<Vec<u32>>> = vec![vec![Vec::new(); layers.len()]; nrep];
        let mut emb_grads: Vec<Vec<u32>> = vec![Vec::new(); nrep];
        let mut head_grads: Vec<Vec<u32>> = vec![Vec::new(); nrep];
        let mut outbound_sends = Vec::with_capacity(m as usize * nrep);

        for mb in 0..m {
            for dir in [Direction::Forward, Direction::Backward] {
                let steps = unit_steps(dir, stage, p, layers.clone());
                for (di, &dp) in dps.iter().enumerate() {
                    let mut heads = vec![u32::MAX; tps.len()];
                    let mut prev = vec![u32::MAX; tps.len()];
                    for &(kind, layer) in &steps {
                        let mut ids = Vec::with_capacity(tps.len());
                        for (ti, &tp) in tps.iter().enumerate() {
                            let id = b.push(
                                kind,
                                layout.rank(tp, dp, stage),
                                stage,
                                Some(mb),
                                layer,
                                None,
                                None,
                            );
                            if prev[ti] == u32::MAX {
                                heads[ti] = id;
                            } else {
                                b.edges.push((prev[ti], id));
                            }
                            ids.push(id);
                            let replica = di * tps.len() + ti;
                            match kind {
                                OpKind::BwdFfn | OpKind::BwdMha => {
                                    let local =
                                        (layer.expect("per-layer op") - first_layer) as usize;
                                    grads[replica][local].push(id);
                                }
                                OpKind::BwdEmbedding => emb_grads[replica].push(id),
                                OpKind::BwdLmHead => head_grads[replica].push(id),
                                _ => {}
                            }
                        }
                        let needs_tp = t > 1
                            && matches!(
                                kind,
                                OpKind::FwdMha | OpKind::FwdFfn | OpKind::BwdMha | OpKind::BwdFfn
                            );
                        if needs_tp {
                            let comm = CommInfo {
                                bytes: act_bytes,
                                group_size: t,
                                group: CommGroup::Tensor { dp, stage },
                            };
                            let ar = b.push(
                                OpKind::AllReduceTp,
                                layout.rank(0, dp, stage),
                                stage,
                                Some(mb),
                                layer,
                                None,
                                Some(comm),
                            );
                            for &id in &ids {
                                b.edges.push((id, ar));
                            }
                            prev.iter_mut().for_each(|x| *x = ar);
                        } else {
                            prev.copy_from_slice(&ids);
                        }
                    }
                    for ti in 0..tps.len() {
                        let replica = di * tps.len() + ti;
                        units[unit_index(stage, mb, dir, replica)] = UnitEnds {
                            head: heads[ti],
                            tail: prev[ti],
                        };
                    }
                }
                for replica in 0..nrep {
                    let (tp, dp) = replicas[replica];
                    let ends = units[unit_index(stage, mb, dir, replica)];
                    match dir {
                        Direction::Forward => {
                            if stage > 0 {
                                b.edges
                                    .push((inbound_sends[mb as usize * nrep + replica], ends.head));
                            }
                            if stage + 1 < p {
                                let comm = CommInfo {
                                    bytes: act_bytes,
                                    group_size: 2,
                                    group: CommGroup::Pipe {
                                        tp,
                                        dp,
                                        from: stage,
                                        to: stage + 1,
                                    },
                                };
                                let send = b.push(
                                    OpKind::SendRecvPp,
                                    layout.rank(tp, dp, stage),
                                    stage,
                                    Some(mb),
                                    None,
                                    None,
                                    Some(comm),
                                );
                                b.edges.push((ends.tail, send));
                                outbound_sends.push(send);
                            }
                        }
                        Direction::Backward => {
                            let fwd = units[unit_index(stage, mb, Direction::Forward, replica)];
                            b.edges.push((fwd.tail, ends.head));
                            if stage > 0 {
                                let comm = CommInfo {
                                    bytes: act_bytes,
                                    group_size: 2,
                                    group: CommGroup::Pipe {
                                        tp,
                                        dp,
                                        from: stage,
                                        to: stage - 1,
                                    },
                                };
                                let send = b.push(
                                    OpKind::SendRecvPp,
                                    layout.rank(tp, dp, stage),
                                    stage,
                                    Some(mb),
                                    None,
                                    None,
                                    Some(comm),
                                );
                                b.edges.push((ends.tail, send));
                                let below =
                                    units[unit_index(stage - 1, mb, Direction::Backward, replica)];
                                b.edges.push((send, below.head));
                            }
                        }
                    }
                }
            }
        }

        // Data-parallel gradient all-reduce per tensor rank and bucket.
        let mut dp_ars: Vec<Vec<u32>> = vec![Vec::new(); tps.len()];
        if d > 1 {
            let buckets = &bucket_layers[stage as usize];
            for (ti, &tp) in tps.iter().enumerate() {
                for (j, bucket) in buckets.iter().enumerate() {
                    let mut params = bucket.len() as u64 * model.layer_params();
                    let holds_embedding = stage == 0 && bucket.start == layers.start;
                    let holds_head = stage + 1 == p && bucket.end == layers.end;
                    if holds_embedding {
                        params += model.embedding_params();
                    }
                    let bytes = 2 * params / t as u64;
                    let comm = CommInfo {
                        bytes,
                        group_size: d,
                        group: CommGroup::Data { tp, stage },
                    };
                    let ar = b.push(
                        OpKind::AllReduceDp,
                        layout.rank(tp, 0, stage),
                        stage,
                        None,
                        None,
                        Some(j as u32),
                        Some(comm),
                    );
                    for di in 0..dps.len() {
                        let replica = di * tps.len() + ti;
                        for l in bucket.clone() {
                            for &g in &grads[replica][(l - first_layer) as usize] {
                                b.edges.push((g, ar));
                            }
                        }
                        if holds_embedding {
                            b.edges.extend(emb_grads[replica].iter().map(|&g| (g, ar)));
                        }
                        if holds_head {
                            b.edges.extend(head_grads[replica].iter().map(|&g| (g, ar)));
                        }
                    }
                    dp_ars[ti].push(ar);
                }
            }
        }

        for (di, &dp) in dps.iter().enumerate() {
            for (ti, &tp) in tps.iter().enumerate() {
                let replica = di * tps.len() + ti;
                let wu = b.push(
                    OpKind::WeightUpdate,
                    layout.rank(tp, dp, stage),
                    stage,
                    None,
                    None,
                    None,
                    None,
                );
                if d > 1 {
                    for &ar in &dp_ars[ti] {
                        b.edges.push((ar, wu));
                    }
                } else {
                    for mb in 0..m {
                        b.edges.push((
                            units[unit_index(stage, mb, Direction::Backward, replica)].tail,
                            wu,
                        ));
                    }
                }
                weight_updates.push(wu);
            }
        }
        inbound_sends = outbound_sends;
    }

    Ok(OperatorGraph {
        model: model.clone(),
        plan: plan.clone(),
        scope,
        nodes: b.nodes,
        edges: b.edges,
        stage_layers,
        bucket_layers,
        replicas,
        units,
        weight_updates,
        scheduled: false,
    })
}
