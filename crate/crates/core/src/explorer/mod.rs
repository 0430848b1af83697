//! Design-space exploration over `(t, d, p)` plans, cost-driven plan picking
//! and compute-optimal model sizing.

mod chinchilla;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use chinchilla::{
    chinchilla_effective, chinchilla_naive, compute_budget, grid_model, ChinchillaPoint,
    ChinchillaReport, NaiveChinchilla, TokenRule, CHINCHILLA_ALPHA, CHINCHILLA_BETA,
    TOKENS_PER_PARAM,
};

use crate::costdb::CostModel;
use crate::engine::{end_to_end, simulate_iteration_time};
use crate::error::{Error, PlanError, Result};
use crate::model::{
    memory_per_gpu, HardwareSpec, ModelConfig, ParallelPlan, Schedule, TrainingRun,
};
use crate::opgraph::{build_operator_graph_with, lower_to_tasks, GraphScope};

/// Source of single-iteration times for a plan.
pub trait IterationEstimator: Sync {
    fn iteration_time(&self, model: &ModelConfig, plan: &ParallelPlan) -> Result<f64>;
}

impl<F> IterationEstimator for F
where
    F: Fn(&ModelConfig, &ParallelPlan) -> Result<f64> + Sync,
{
    fn iteration_time(&self, model: &ModelConfig, plan: &ParallelPlan) -> Result<f64> {
        self(model, plan)
    }
}

/// Builds, lowers and simulates the execution graph of each plan.
pub struct Simulator<'a> {
    pub cost: &'a dyn CostModel,
    pub scope: GraphScope,
}

impl<'a> Simulator<'a> {
    pub fn new(cost: &'a dyn CostModel) -> Self {
        Simulator {
            cost,
            scope: GraphScope::Representative,
        }
    }
}

impl IterationEstimator for Simulator<'_> {
    fn iteration_time(&self, model: &ModelConfig, plan: &ParallelPlan) -> Result<f64> {
        let graph = build_operator_graph_with(model, plan, self.scope)?;
        let lowered = lower_to_tasks(&graph, self.cost)?;
        drop(graph);
        simulate_iteration_time(&lowered.tasks)
    }
}

/// Batch split, schedule and feasibility screens applied to every candidate
/// `(t, d, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanSpace {
    pub global_batch: u64,
    pub micro_batch: u64,
    pub schedule: Schedule,
    pub grad_buckets: u32,
    /// Reject plans whose estimated per-GPU memory exceeds the device.
    pub memory_filter: bool,
    /// Require `p` to divide the layer count.
    pub even_stages: bool,
    /// Require tensor groups to fit in one node.
    pub tp_within_node: bool,
}

impl Default for PlanSpace {
    fn default() -> Self {
        PlanSpace {
            global_batch: 1920,
            micro_batch: 1,
            schedule: Schedule::OneFOneB,
            grad_buckets: 1,
            memory_filter: false,
            even_stages: false,
            tp_within_node: false,
        }
    }
}

impl PlanSpace {
    pub fn plan(&self, t: u32, d: u32, p: u32) -> ParallelPlan {
        ParallelPlan::new(t, d, p, self.global_batch)
            .with_micro_batch(self.micro_batch)
            .with_schedule(self.schedule)
            .with_buckets(self.grad_buckets)
    }

    pub fn check(
        &self,
        model: &ModelConfig,
        hw: &HardwareSpec,
        plan: &ParallelPlan,
    ) -> Result<(), PlanError> {
        plan.validate(model)?;
        if self.even_stages && !model.num_layers.is_multiple_of(plan.pipeline) {
            return Err(PlanError::UnevenStages {
                p: plan.pipeline,
                layers: model.num_layers,
            });
        }
        if self.tp_within_node && plan.tensor > hw.gpus_per_node {
            return Err(PlanError::TensorAcrossNodes {
                t: plan.tensor,
                per_node: hw.gpus_per_node,
            });
        }
        if self.memory_filter {
            let needed = memory_per_gpu(model, plan);
            if needed > hw.gpu_mem_bytes {
                return Err(PlanError::OutOfMemory {
                    needed,
                    capacity: hw.gpu_mem_bytes,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepBounds {
    pub t_max: u32,
    pub d_max: u32,
    pub p_max: u32,
}

impl SweepBounds {
    pub fn new(t_max: u32, d_max: u32, p_max: u32) -> Self {
        SweepBounds {
            t_max,
            d_max,
            p_max,
        }
    }

    pub fn triples(&self) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
        (1..=self.t_max).flat_map(move |t| {
            (1..=self.d_max).flat_map(move |d| (1..=self.p_max).map(move |p| (t, d, p)))
        })
    }
}

/// How long a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingLength {
    Tokens(u64),
    Iterations(u64),
}

impl TrainingLength {
    pub fn run(&self, model: &ModelConfig, plan: &ParallelPlan, hw: &HardwareSpec) -> TrainingRun {
        let (total_tokens, iterations_override) = match *self {
            TrainingLength::Tokens(t) => (t, None),
            TrainingLength::Iterations(i) => (0, Some(i)),
        };
        TrainingRun {
            model: model.clone(),
            plan: plan.clone(),
            hw: hw.clone(),
            total_tokens,
            iterations_override,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub plan: ParallelPlan,
    pub gpus: u64,
    pub iter_time: Option<f64>,
    pub days: Option<f64>,
    pub utilization: Option<f64>,
    pub dollars_per_hour: f64,
    pub dollars_total: Option<f64>,
    pub valid: bool,
    pub skip_reason: Option<String>,
}

impl SweepPoint {
    /// Evaluated point for a known iteration time.
    pub fn evaluated(run: &TrainingRun, iter_time: f64) -> Self {
        let r = end_to_end(run, iter_time);
        let gpus = run.plan.gpus();
        let dollars_per_hour = gpus as f64 * run.hw.dollars_per_gpu_hour;
        let days = r.end_to_end_days.expect("end_to_end fills days");
        SweepPoint {
            plan: run.plan.clone(),
            gpus,
            iter_time: Some(iter_time),
            days: Some(days),
            utilization: r.utilization,
            dollars_per_hour,
            dollars_total: Some(days * 24.0 * dollars_per_hour),
            valid: true,
            skip_reason: None,
        }
    }

    pub fn skipped(plan: ParallelPlan, hw: &HardwareSpec, reason: String) -> Self {
        let gpus = plan.gpus();
        SweepPoint {
            plan,
            gpus,
            iter_time: None,
            days: None,
            utilization: None,
            dollars_per_hour: gpus as f64 * hw.dollars_per_gpu_hour,
            dollars_total: None,
            valid: false,
            skip_reason: Some(reason),
        }
    }

    fn dollars(&self) -> f64 {
        self.dollars_total.unwrap_or(f64::INFINITY)
    }

    fn days_or_inf(&self) -> f64 {
        self.days.unwrap_or(f64::INFINITY)
    }
}

/// Evaluates every `(t, d, p)` within `bounds`. Invalid or failing plans are
/// kept with a skip reason. Valid points come first, cheapest first.
pub fn sweep(
    model: &ModelConfig,
    hw: &HardwareSpec,
    bounds: SweepBounds,
    space: &PlanSpace,
    length: TrainingLength,
    estimator: &dyn IterationEstimator,
) -> Vec<SweepPoint> {
    sweep_with_progress(model, hw, bounds, space, length, estimator, &|_| {})
}

/// [`sweep`] calling `progress` as each point finishes, in completion order.
pub fn sweep_with_progress(
    model: &ModelConfig,
    hw: &HardwareSpec,
    bounds: SweepBounds,
    space: &PlanSpace,
    length: TrainingLength,
    estimator: &dyn IterationEstimator,
    progress: &(dyn Fn(&SweepPoint) + Sync),
) -> Vec<SweepPoint> {
    let candidates: Vec<(u32, u32, u32)> = bounds.triples().collect();
    let mut points: Vec<SweepPoint> = candidates
        .par_iter()
        .map(|&(t, d, p)| {
            let plan = space.plan(t, d, p);
            let point = match space.check(model, hw, &plan) {
                Err(e) => SweepPoint::skipped(plan, hw, e.to_string()),
                Ok(()) => match estimator.iteration_time(model, &plan) {
                    Ok(iter_time) => {
                        SweepPoint::evaluated(&length.run(model, &plan, hw), iter_time)
                    }
                    Err(e) => {
                        log::warn!("plan {plan} failed: {e}");
                        SweepPoint::skipped(plan, hw, e.to_string())
                    }
                },
            };
            progress(&point);
            point
        })
        .collect();
    sort_points(&mut points);
    points
}

fn sort_points(points: &mut [SweepPoint]) {
    points.sort_by(|a, b| {
        b.valid
            .cmp(&a.valid)
            .then(a.dollars().total_cmp(&b.dollars()))
            .then(a.plan.triple().cmp(&b.plan.triple()))
    });
}

/// Points not beaten in both training days and total dollars by another
/// point, ordered by days.
pub fn pareto_frontier(points: &[SweepPoint]) -> Vec<SweepPoint> {
    let mut valid: Vec<&SweepPoint> = points.iter().filter(|p| p.valid).collect();
    valid.sort_by(|a, b| {
        a.days_or_inf()
            .total_cmp(&b.days_or_inf())
            .then(a.dollars().total_cmp(&b.dollars()))
    });
    let mut frontier: Vec<SweepPoint> = Vec::new();
    let mut best = f64::INFINITY;
    for p in valid {
        if p.dollars() < best {
            best = p.dollars();
            frontier.push(p.clone());
        }
    }
    frontier
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub baseline_gpus: u64,
    pub point: SweepPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickReport {
    pub window: f64,
    pub picks: Vec<Pick>,
    pub frontier: Vec<SweepPoint>,
}

/// Cheapest valid point whose GPU count lies in
/// `[baseline * (1 - window), baseline]`.
pub fn pick_for_budget(
    points: &[SweepPoint],
    baseline_gpus: u64,
    window: f64,
) -> Result<SweepPoint> {
    let low = baseline_gpus as f64 * (1.0 - window);
    points
        .iter()
        .filter(|p| p.valid && p.gpus <= baseline_gpus && p.gpus as f64 >= low)
        .min_by(|a, b| {
            a.dollars()
                .total_cmp(&b.dollars())
                .then(a.days_or_inf().total_cmp(&b.days_or_inf()))
                .then(a.gpus.cmp(&b.gpus))
                .then(a.plan.triple().cmp(&b.plan.triple()))
        })
        .cloned()
        .ok_or_else(|| {
            Error::Config(format!(
                "no valid point within the GPU budget window of {baseline_gpus}"
            ))
        })
}

/// Recommended point per baseline budget plus the days/dollars frontier.
pub fn pareto_and_pick(
    points: &[SweepPoint],
    baselines: &[u64],
    window: f64,
) -> Result<PickReport> {
    if points.is_empty() {
        return Err(Error::Config("no sweep points to pick from".into()));
    }
    let picks = baselines
        .iter()
        .map(|&g| {
            pick_for_budget(points, g, window).map(|point| Pick {
                baseline_gpus: g,
                point,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PickReport {
        window,
        picks,
        frontier: pareto_frontier(points),
    })
}

pub const SWEEP_CSV_HEADER: [&str; 13] = [
    "t",
    "d",
    "p",
    "micro_batch",
    "schedule",
    "gpus",
    "iter_time_s",
    "days",
    "utilization",
    "dollars_per_hour",
    "dollars_total",
    "valid",
    "skip_reason",
];

pub fn write_sweep_csv<W: Write>(points: &[SweepPoint], out: W) -> Result<()> {
    // Shortest round-trip form, so tiny models keep their digits.
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_CSV_HEADER)?;
    for p in points {
        w.write_record([
            p.plan.tensor.to_string(),
            p.plan.data.to_string(),
            p.plan.pipeline.to_string(),
            p.plan.micro_batch.to_string(),
            p.plan.schedule.to_string(),
            p.gpus.to_string(),
            opt(p.iter_time),
            opt(p.days),
            opt(p.utilization),
            p.dollars_per_hour.to_string(),
            opt(p.dollars_total),
            p.valid.to_string(),
            p.skip_reason.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
