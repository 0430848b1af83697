use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use plansim_core::cluster::{
    build_curves, compare_modes, load_trace, run_schedule, synthetic_trace, write_trace, Catalog,
    ClusterConfig, CurveMode, CurveSet, Job, JobOutcome, Metrics, ScheduleResult, TraceParams,
    DEFAULT_TOTAL_GPUS,
};
use plansim_core::{CostOptions, GraphScope, HardwareSpec, Simulator};
use serde::{Deserialize, Serialize};

use crate::config::{self, invalid, CostSection, Outputs, Source};

#[derive(clap::Args)]
pub struct Args {
    /// Cluster experiment description (JSON).
    config: PathBuf,
    /// Write per-job outcomes and metrics for both modes as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Save the throughput curves for reuse via `curves` in the config.
    #[arg(long)]
    curves_out: Option<PathBuf>,
    /// Save the (possibly generated) trace as CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
enum TraceSource {
    Path(PathBuf),
    Synthetic {
        seed: u64,
        #[serde(flatten)]
        params: TraceParams,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterFile {
    #[serde(default)]
    catalog: Option<Source<Catalog>>,
    #[serde(default)]
    hardware: Option<Source<HardwareSpec>>,
    #[serde(default = "default_gpus")]
    total_gpus: u64,
    #[serde(default = "yes")]
    deadline_mode: bool,
    trace: TraceSource,
    /// Precomputed curves from `--curves-out`.
    #[serde(default)]
    curves: Option<PathBuf>,
    /// Run the optimal mode on its own instead of guided by the baseline
    /// allocations.
    #[serde(default)]
    independent: bool,
    #[serde(default)]
    profiles: Vec<PathBuf>,
    #[serde(default)]
    cost: CostOptions,
    #[serde(default)]
    scope: GraphScope,
}

fn default_gpus() -> u64 {
    DEFAULT_TOTAL_GPUS
}

fn yes() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
struct Curves {
    total_gpus: u64,
    baseline: CurveSet,
    optimal: CurveSet,
}

#[derive(Serialize)]
struct ModeReport {
    metrics: Metrics,
    jobs: Vec<JobOutcome>,
}

impl From<ScheduleResult> for ModeReport {
    fn from(r: ScheduleResult) -> Self {
        ModeReport {
            metrics: r.metrics,
            jobs: r.jobs,
        }
    }
}

#[derive(Serialize)]
struct Report {
    total_gpus: u64,
    deadline_mode: bool,
    guided: bool,
    jobs: usize,
    baseline: ModeReport,
    optimal: ModeReport,
    dominance: Dominance,
}

#[derive(Serialize)]
struct Dominance {
    deadline_ratio: bool,
    avg_jct: bool,
    makespan: bool,
}

fn dominance(b: &Metrics, o: &Metrics, deadline_mode: bool) -> Dominance {
    Dominance {
        deadline_ratio: !deadline_mode || o.deadline_ratio >= b.deadline_ratio,
        avg_jct: deadline_mode || o.avg_jct <= b.avg_jct,
        makespan: o.makespan <= b.makespan,
    }
}

pub fn run(args: Args, profile_dir: Option<&Path>) -> Result<()> {
    let (cfg, base): (ClusterFile, _) = config::load_config(&args.config)?;
    let catalog = match cfg.catalog {
        Some(src) => src.resolve(&base, "catalog")?,
        None => Catalog::gpt_trio(),
    };
    catalog.validate().context("catalog")?;
    let hw = config::hardware(cfg.hardware, &base)?;
    if cfg.total_gpus == 0 {
        return Err(invalid("config: total_gpus must be >= 1"));
    }
    let ids: Vec<String> = catalog.models.iter().map(|e| e.id.clone()).collect();
    let jobs: Vec<Job> = match &cfg.trace {
        TraceSource::Path(p) => load_trace(&base.join(p))?,
        TraceSource::Synthetic { seed, params } => synthetic_trace(*seed, params, &ids)?,
    };
    if let Some(j) = jobs.iter().find(|j| catalog.get(&j.model_id).is_none()) {
        return Err(invalid(format!(
            "trace job {} uses unknown model {}",
            j.id, j.model_id
        )));
    }

    let curves = if jobs.is_empty() {
        Curves {
            total_gpus: cfg.total_gpus,
            baseline: CurveSet::new(),
            optimal: CurveSet::new(),
        }
    } else if let Some(p) = &cfg.curves {
        let c: Curves = config::read_json(&base.join(p), "curves")?;
        if c.total_gpus != cfg.total_gpus {
            return Err(invalid(format!(
                "curves were built for {} GPUs, config has {}",
                c.total_gpus, cfg.total_gpus
            )));
        }
        if let Some(id) = ids
            .iter()
            .find(|id| !c.baseline.contains_key(*id) || !c.optimal.contains_key(*id))
        {
            return Err(invalid(format!("curves file lacks model {id}")));
        }
        c
    } else {
        let section = CostSection {
            profiles: cfg.profiles,
            cost: cfg.cost,
            scope: cfg.scope,
        };
        let (db, _) = section.database(&hw, &base, profile_dir)?;
        let sim = Simulator {
            cost: &db,
            scope: section.scope,
        };
        log::info!(
            "building throughput curves for {} models",
            catalog.models.len()
        );
        let baseline = build_curves(&catalog, &hw, cfg.total_gpus, CurveMode::Baseline, &sim)
            .context("curves")?;
        let optimal = build_curves(&catalog, &hw, cfg.total_gpus, CurveMode::Optimal, &sim)
            .context("curves")?;
        Curves {
            total_gpus: cfg.total_gpus,
            baseline,
            optimal,
        }
    };

    let config = ClusterConfig {
        total_gpus: cfg.total_gpus,
        deadline_mode: cfg.deadline_mode,
    };
    let (b, o) = if cfg.independent {
        let b =
            run_schedule(&jobs, &curves.baseline, &curves.optimal, config).context("schedule")?;
        let o =
            run_schedule(&jobs, &curves.optimal, &curves.optimal, config).context("schedule")?;
        (b, o)
    } else {
        compare_modes(&jobs, &curves.baseline, &curves.optimal, config).context("schedule")?
    };
    let report = Report {
        total_gpus: cfg.total_gpus,
        deadline_mode: cfg.deadline_mode,
        guided: !cfg.independent,
        jobs: jobs.len(),
        dominance: dominance(&b.metrics, &o.metrics, cfg.deadline_mode),
        baseline: b.into(),
        optimal: o.into(),
    };

    let mut out = Outputs::default();
    out.add(args.out.as_deref(), config::to_json(&report)?);
    if args.curves_out.is_some() {
        out.add(args.curves_out.as_deref(), config::to_json(&curves)?);
    }
    if args.trace_out.is_some() {
        let mut buf = Vec::new();
        write_trace(&jobs, &mut buf)?;
        out.add(args.trace_out.as_deref(), buf);
    }
    print!("{}", summary(&report));
    out.commit()
}

fn summary(r: &Report) -> String {
    let mut s = format!(
        "{} jobs on {} GPUs, {} mode{}\n",
        r.jobs,
        r.total_gpus,
        if r.deadline_mode {
            "deadline"
        } else {
            "best-effort"
        },
        if r.guided { "" } else { ", independent runs" }
    );
    s += "mode     | completed | deadlines met | deadline ratio | avg JCT (h) | makespan (h)\n";
    for (name, m) in [
        ("baseline", &r.baseline.metrics),
        ("optimal", &r.optimal.metrics),
    ] {
        s += &format!(
            "{name:<8} | {} | {} | {:.4} | {:.3} | {:.3}\n",
            m.completed,
            m.deadlines_met,
            m.deadline_ratio,
            m.avg_jct / 3600.0,
            m.makespan / 3600.0
        );
    }
    let d = &r.dominance;
    s += &format!(
        "optimal no worse: deadline ratio {}, avg JCT {}, makespan {}\n",
        d.deadline_ratio, d.avg_jct, d.makespan
    );
    s
}
