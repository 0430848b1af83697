//! Cost models with hand-picked durations, shared by the integration tests.
#![allow(dead_code)]

use plansim_core::costdb::{CommRequest, KernelEntry};
use plansim_core::engine::{peak_in_flight_forwards, simulate_iteration, Span};
use plansim_core::opgraph::lower_to_tasks;
use plansim_core::{
    build_operator_graph, CostModel, HardwareSpec, ModelConfig, OpKind, OperatorGraph,
    OperatorSignature, ParallelPlan, Result, TaskGraph,
};

/// One decoder layer per stage costs `fwd` forward and `bwd` backward; every
/// other operator and all communication is free.
pub struct UniformStages {
    pub fwd: f64,
    pub bwd: f64,
    pub hw: HardwareSpec,
}

impl CostModel for UniformStages {
    fn resolve(&self, sig: &OperatorSignature) -> Result<Vec<KernelEntry>> {
        let d = match sig.kind {
            OpKind::FwdMha => self.fwd,
            OpKind::BwdMha => self.bwd,
            _ => 0.0,
        };
        Ok(vec![KernelEntry::new("k", d)])
    }

    fn comm_time(&self, _: &CommRequest) -> Result<f64> {
        Ok(0.0)
    }

    fn hardware(&self) -> &HardwareSpec {
        &self.hw
    }
}

/// Backward of each layer costs `bwd_per_layer`; a data-parallel all-reduce
/// costs `ar_per_layer` per decoder layer in its bucket. Needs
/// `vocab + seq < 12 h` so the embedding rides along without adding a layer.
pub struct Buckets {
    pub hidden: u32,
    pub bwd_per_layer: f64,
    pub ar_per_layer: f64,
    pub hw: HardwareSpec,
}

impl CostModel for Buckets {
    fn resolve(&self, sig: &OperatorSignature) -> Result<Vec<KernelEntry>> {
        let d = match sig.kind {
            OpKind::FwdMha => 0.5,
            OpKind::BwdMha => self.bwd_per_layer,
            _ => 0.0,
        };
        Ok(vec![KernelEntry::new("k", d)])
    }

    fn comm_time(&self, req: &CommRequest) -> Result<f64> {
        let layer_bytes = 24 * self.hidden as u64 * self.hidden as u64;
        Ok((req.bytes / layer_bytes) as f64 * self.ar_per_layer)
    }

    fn hardware(&self) -> &HardwareSpec {
        &self.hw
    }
}

pub fn small_model(layers: u32) -> ModelConfig {
    ModelConfig::new("small", 64, layers, 4, 16).with_vocab(128)
}

pub struct Run {
    pub graph: OperatorGraph,
    pub tasks: TaskGraph,
    pub iter_time: f64,
    pub timeline: Vec<Span>,
}

pub fn run(model: &ModelConfig, plan: &ParallelPlan, cost: &dyn CostModel) -> Run {
    let graph = build_operator_graph(model, plan).unwrap();
    let tasks = lower_to_tasks(&graph, cost).unwrap().tasks;
    let r = simulate_iteration(&tasks).unwrap();
    Run {
        iter_time: r.iter_time,
        timeline: r.timeline.unwrap(),
        graph,
        tasks,
    }
}

impl Run {
    pub fn peak_in_flight(&self) -> usize {
        peak_in_flight_forwards(&self.graph, &self.tasks, &self.timeline)
            .values()
            .copied()
            .max()
            .unwrap_or(0)
    }
}
