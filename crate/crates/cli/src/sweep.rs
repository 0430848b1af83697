use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{Context, Result};
use plansim_core::explorer::{pareto_and_pick, sweep_with_progress, write_sweep_csv};
use plansim_core::{
    CostOptions, GraphScope, HardwareSpec, ModelConfig, PlanSpace, Simulator, SweepBounds,
    SweepPoint, TrainingLength,
};
use serde::Deserialize;

use crate::config::{self, invalid, CostSection, Outputs, Source};

#[derive(clap::Args)]
pub struct Args {
    /// Sweep description (JSON).
    config: PathBuf,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pareto frontier and per-budget picks as JSON.
    #[arg(long)]
    picks: Option<PathBuf>,
    #[arg(long)]
    t_max: Option<u32>,
    #[arg(long)]
    d_max: Option<u32>,
    #[arg(long)]
    p_max: Option<u32>,
    /// Baseline GPU counts to pick a plan for (repeatable).
    #[arg(long = "baseline")]
    baselines: Vec<u64>,
    /// Fraction below each baseline a pick may fall.
    #[arg(long)]
    window: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    model: Source<ModelConfig>,
    #[serde(default)]
    hardware: Option<Source<HardwareSpec>>,
    bounds: SweepBounds,
    #[serde(default)]
    space: PlanSpace,
    training: TrainingLength,
    #[serde(default)]
    baselines: Vec<u64>,
    #[serde(default = "default_window")]
    window: f64,
    #[serde(default)]
    profiles: Vec<PathBuf>,
    #[serde(default)]
    cost: CostOptions,
    #[serde(default)]
    scope: GraphScope,
}

fn default_window() -> f64 {
    0.15
}

pub fn run(args: Args, profile_dir: Option<&Path>) -> Result<()> {
    let (cfg, base): (SweepConfig, _) = config::load_config(&args.config)?;
    let model = cfg.model.resolve(&base, "model")?;
    model.validate().context("config")?;
    let hw = config::hardware(cfg.hardware, &base)?;
    let bounds = SweepBounds::new(
        args.t_max.unwrap_or(cfg.bounds.t_max),
        args.d_max.unwrap_or(cfg.bounds.d_max),
        args.p_max.unwrap_or(cfg.bounds.p_max),
    );
    if bounds.t_max == 0 || bounds.d_max == 0 || bounds.p_max == 0 {
        return Err(invalid("sweep bounds must be >= 1"));
    }
    let window = args.window.unwrap_or(cfg.window);
    if !(0.0..1.0).contains(&window) {
        return Err(invalid(format!("window {window} must lie in [0, 1)")));
    }
    let baselines = if args.baselines.is_empty() {
        cfg.baselines
    } else {
        args.baselines
    };
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

    let total = bounds.t_max as usize * bounds.d_max as usize * bounds.p_max as usize;
    let done = AtomicUsize::new(0);
    let progress = |p: &SweepPoint| {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        match (p.iter_time, &p.skip_reason) {
            (Some(t), _) => log::info!("[{k}/{total}] {} {t:.4} s", p.plan),
            (None, Some(why)) => log::info!("[{k}/{total}] {} skipped: {why}", p.plan),
            (None, None) => log::info!("[{k}/{total}] {}", p.plan),
        }
    };
    let points = sweep_with_progress(
        &model,
        &hw,
        bounds,
        &cfg.space,
        cfg.training,
        &sim,
        &progress,
    );

    let mut csv = Vec::new();
    write_sweep_csv(&points, &mut csv)?;
    let valid = points.iter().filter(|p| p.valid).count();
    let mut summary = format!("{} points, {} valid\n", points.len(), valid);
    let mut out = Outputs::default();
    if !baselines.is_empty() || args.picks.is_some() {
        let report = pareto_and_pick(&points, &baselines, window).context("pick")?;
        for pick in &report.picks {
            let p = &pick.point;
            summary += &format!(
                "baseline {} GPUs -> {} on {} GPUs: {:.2} days, ${:.2}M\n",
                pick.baseline_gpus,
                p.plan,
                p.gpus,
                p.days.unwrap_or(f64::NAN),
                p.dollars_total.unwrap_or(f64::NAN) / 1e6
            );
        }
        out.add(args.picks.as_deref(), config::to_json(&report)?);
    }
    match &args.out {
        Some(path) => {
            out.add(Some(path), csv);
            out.commit()?;
            print!("{summary}");
        }
        None => {
            out.commit()?;
            std::io::stdout().write_all(&csv)?;
            eprint!("{summary}");
        }
    }
    Ok(())
}
