use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use plansim_core::engine::{simulate_iteration, write_timeline_csv};
use plansim_core::opgraph::{
    build_operator_graph_with, graph_json, lower_to_tasks, topological_summary, validate_graph,
    LoweringStats,
};
use plansim_core::{
    CostOptions, GraphScope, HardwareSpec, ModelConfig, ParallelPlan, SimResult, TrainingLength,
};
use serde::{Deserialize, Serialize};

use crate::config::{self, CostSection, CostSummary, Outputs, Source};

#[derive(clap::Args)]
pub struct Args {
    /// Run description (JSON).
    config: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the per-task timeline as CSV.
    #[arg(long)]
    timeline: Option<PathBuf>,
    /// Dump the operator graph as JSON.
    #[arg(long)]
    graph_json: Option<PathBuf>,
    /// Dump the operator graph as a topologically ordered text listing.
    #[arg(long)]
    graph_summary: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    model: Source<ModelConfig>,
    #[serde(default)]
    hardware: Option<Source<HardwareSpec>>,
    plan: Source<ParallelPlan>,
    #[serde(default)]
    training: Option<TrainingLength>,
    #[serde(default)]
    profiles: Vec<PathBuf>,
    #[serde(default)]
    cost: CostOptions,
    #[serde(default)]
    scope: GraphScope,
}

#[derive(Serialize)]
struct Report {
    model: ModelConfig,
    plan: ParallelPlan,
    gpus: u64,
    scope: GraphScope,
    #[serde(skip_serializing_if = "Option::is_none")]
    training: Option<TrainingLength>,
    cost_database: CostSummary,
    lowering: LoweringStats,
    result: SimResult,
}

pub fn run(args: Args, profile_dir: Option<&Path>) -> Result<()> {
    let (cfg, base): (SimulateConfig, _) = config::load_config(&args.config)?;
    let model = cfg.model.resolve(&base, "model")?;
    model.validate().context("config")?;
    let hw = config::hardware(cfg.hardware, &base)?;
    let plan = cfg.plan.resolve(&base, "plan")?;
    plan.validate(&model).context("config")?;
    let section = CostSection {
        profiles: cfg.profiles,
        cost: cfg.cost,
        scope: cfg.scope,
    };
    let (db, summary) = section.database(&hw, &base, profile_dir)?;

    let graph = build_operator_graph_with(&model, &plan, cfg.scope).context("graph")?;
    let problems = validate_graph(&graph);
    if !problems.is_empty() {
        let lines: Vec<String> = problems.iter().map(ToString::to_string).collect();
        anyhow::bail!(
            "graph: {} structural problem(s):\n  {}",
            lines.len(),
            lines.join("\n  ")
        );
    }
    let lowered = lower_to_tasks(&graph, &db).context("cost database")?;
    let mut result = simulate_iteration(&lowered.tasks).context("simulation")?;
    let timeline = result.timeline.take().unwrap_or_default();
    if let Some(len) = cfg.training {
        result = result.with_run(&len.run(&model, &plan, &hw));
    }

    let mut out = Outputs::default();
    if args.timeline.is_some() {
        let mut buf = Vec::new();
        write_timeline_csv(&lowered.tasks, &timeline, &mut buf)?;
        out.add(args.timeline.as_deref(), buf);
    }
    if args.graph_json.is_some() {
        out.add(
            args.graph_json.as_deref(),
            config::to_json(&graph_json(&graph))?,
        );
    }
    out.add(args.graph_summary.as_deref(), topological_summary(&graph));
    let report = Report {
        gpus: plan.gpus(),
        model,
        plan,
        scope: cfg.scope,
        training: cfg.training,
        cost_database: summary,
        lowering: lowered.stats,
        result,
    };
    out.add(args.report.as_deref(), config::to_json(&report)?);
    print!("{}", human(&report));
    out.commit()
}

fn human(r: &Report) -> String {
    let p = &r.plan;
    let mut s = format!(
        "{}  plan {} {} b={} m={} buckets={}  {} GPUs\n",
        r.model.name,
        p,
        p.schedule,
        p.micro_batch,
        p.num_micro_batches(),
        p.grad_buckets,
        r.gpus
    );
    s += &format!(
        "graph: {} operators, {} tasks, {} edges; {} signature lookups, {} collective queries\n",
        r.lowering.operators,
        r.lowering.tasks,
        r.lowering.edges,
        r.lowering.db_lookups,
        r.lowering.comm_queries
    );
    s += &format!("iteration time: {}\n", seconds(r.result.iter_time));
    if let Some(busiest) = r
        .result
        .per_device_busy
        .values()
        .map(|b| b.compute)
        .reduce(f64::max)
    {
        s += &format!("busiest device compute: {}\n", seconds(busiest));
    }
    if let (Some(days), Some(util), Some(dollars)) = (
        r.result.end_to_end_days,
        r.result.utilization,
        r.result.dollars,
    ) {
        s += "(t, d, p) | iteration (s) | days | utilization (%) | GPUs | $M\n";
        s += &format!(
            "({}, {}, {}) | {:.2} | {:.2} | {:.2} | {} | {:.2}\n",
            p.tensor,
            p.data,
            p.pipeline,
            r.result.iter_time,
            days,
            util * 100.0,
            r.gpus,
            dollars / 1e6
        );
    }
    s
}

fn seconds(x: f64) -> String {
    if x < 1e-3 {
        format!("{:.3} us", x * 1e6)
    } else {
        format!("{x:.6} s")
    }
}
