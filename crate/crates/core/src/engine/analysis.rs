use std::collections::BTreeMap;

use super::sim::Span;
use super::taskgraph::{TaskGraph, NO_ORIGIN};
use crate::opgraph::{OpKind, OperatorGraph};

/// Peak number of micro-batches per device whose forward pass has started
/// and whose backward pass has not finished, read from a timeline.
pub fn peak_in_flight_forwards(
    og: &OperatorGraph,
    tg: &TaskGraph,
    timeline: &[Span],
) -> BTreeMap<u32, usize> {
    // (device, mb) -> (first forward start, last backward end)
    let mut windows: BTreeMap<(u32, u32), (f64, f64)> = BTreeMap::new();
    for (id, span) in timeline.iter().enumerate() {
        let task = tg.task(id as u32);
        if task.origin == NO_ORIGIN {
            continue;
        }
        let op = &og.nodes[task.origin as usize];
        let Some(mb) = op.micro_batch else { continue };
        let entry = windows
            .entry((task.device, mb))
            .or_insert((f64::INFINITY, f64::NEG_INFINITY));
        if op.kind.is_forward_compute() {
            entry.0 = entry.0.min(span.start);
        } else if op.kind.is_backward_compute() {
            entry.1 = entry.1.max(span.end);
        }
    }
    let mut events: BTreeMap<u32, Vec<(f64, i32)>> = BTreeMap::new();
    for (&(device, _), &(start, end)) in &windows {
        if start.is_finite() && end.is_finite() {
            let list = events.entry(device).or_default();
            list.push((start, 1));
            list.push((end, -1));
        }
    }
    events
        .into_iter()
        .map(|(device, mut list)| {
            // Ends sort before starts at equal times.
            list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let (mut live, mut peak) = (0i32, 0i32);
            for (_, delta) in list {
                live += delta;
                peak = peak.max(live);
            }
            (device, peak as usize)
        })
        .collect()
}

/// Longest gap on any device between its last backward computation and its
/// weight update: the data-parallel communication left on the critical path.
pub fn exposed_dp_comm(og: &OperatorGraph, tg: &TaskGraph, timeline: &[Span]) -> f64 {
    let mut last_bwd: BTreeMap<u32, f64> = BTreeMap::new();
    let mut update: BTreeMap<u32, f64> = BTreeMap::new();
    for (id, span) in timeline.iter().enumerate() {
        let task = tg.task(id as u32);
        if task.origin == NO_ORIGIN {
            continue;
        }
        match og.nodes[task.origin as usize].kind {
            kind if kind.is_backward_compute() => {
                let e = last_bwd.entry(task.device).or_insert(0.0);
                *e = e.max(span.end);
            }
            OpKind::WeightUpdate => {
                let e = update.entry(task.device).or_insert(f64::INFINITY);
                *e = e.min(span.start);
            }
            _ => {}
        }
    }
    update
        .iter()
        .filter_map(|(device, &start)| last_bwd.get(device).map(|&end| (start - end).max(0.0)))
        .fold(0.0, f64::max)
}
