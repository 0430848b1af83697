use std::collections::VecDeque;
use std::fmt::Write;

use serde_json::{json, Value};

use super::OperatorGraph;

/// JSON document with the model, plan, nodes (all attributes) and edges.
pub fn graph_json(g: &OperatorGraph) -> Value {
    json!({
        "model": g.model,
        "plan": g.plan,
        "scope": g.scope,
        "nodes": g.nodes,
        "edges": g.edges,
    })
}

/// One line per node in a deterministic topological order.
pub fn topological_summary(g: &OperatorGraph) -> String {
    let n = g.nodes.len();
    let mut succ: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut indeg = vec![0u32; n];
    for &(u, v) in &g.edges {
        succ[u as usize].push(v);
        indeg[v as usize] += 1;
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# {} plan {} {} global_batch={} micro_batch={} buckets={}: {} nodes, {} edges",
        g.model.name,
        g.plan,
        g.plan.schedule,
        g.plan.global_batch,
        g.plan.micro_batch,
        g.plan.grad_buckets,
        n,
        g.edges.len()
    );
    let mut queue: VecDeque<u32> = (0..n as u32).filter(|&u| indeg[u as usize] == 0).collect();
    let mut listed = 0;
    while let Some(u) = queue.pop_front() {
        listed += 1;
        let node = &g.nodes[u as usize];
        let _ = write!(
            out,
            "{u} {} gpu={} stage={}",
            node.kind, node.gpu, node.stage
        );
        if let Some(mb) = node.micro_batch {
            let _ = write!(out, " mb={mb}");
        }
        if let Some(l) = node.layer {
            let _ = write!(out, " layer={l}");
        }
        if let Some(b) = node.bucket {
            let _ = write!(out, " bucket={b}");
        }
        if let Some(c) = node.comm {
            let _ = write!(out, " bytes={} group={}", c.bytes, c.group_size);
        }
        out.push('\n');
        for &v in &succ[u as usize] {
            indeg[v as usize] -= 1;
            if indeg[v as usize] == 0 {
                queue.push_back(v);
            }
        }
    }
    if listed < n {
        let _ = writeln!(out, "# {} nodes not listed: graph has a cycle", n - listed);
    }
    out
}
