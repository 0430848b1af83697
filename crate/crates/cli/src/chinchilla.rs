use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Subcommand;
use plansim_core::explorer::{
    chinchilla_effective, chinchilla_naive, compute_budget, ChinchillaReport, TokenRule,
};
use plansim_core::{
    CostOptions, Error, GraphScope, HardwareSpec, ModelConfig, ParallelPlan, PlanSpace, Simulator,
};
use serde::Deserialize;

use crate::config::{self, invalid, CostSection, Outputs, Source};

#[derive(clap::Args)]
pub struct Args {
    #[command(subcommand)]
    mode: Mode,
}

#[derive(Subcommand)]
enum Mode {
    /// Compute-optimal parameters and tokens from the scaling-law fit alone.
    Naive {
        /// Compute budget in FLOPs.
        #[arg(long, conflicts_with_all = ["gpus", "days"])]
        compute: Option<f64>,
        /// Derive the budget from GPUs x peak FLOP/s x days.
        #[arg(long, requires = "days")]
        gpus: Option<u64>,
        #[arg(long, requires = "gpus")]
        days: Option<f64>,
        /// Per-GPU peak FLOP/s.
        #[arg(long, default_value_t = 312e12)]
        peak_flops: f64,
    },
    /// Largest grid model trainable within a wall-clock budget.
    Effective {
        /// Grid description (JSON).
        config: PathBuf,
        /// Measured iteration times (CSV: hidden,layers,t,d,p,iter_time_s)
        /// to use instead of the simulator.
        #[arg(long)]
        timings: Option<PathBuf>,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EffectiveConfig {
    #[serde(default)]
    hardware: Option<Source<HardwareSpec>>,
    gpus: u64,
    days_budget: f64,
    /// `[hidden, layers]` pairs.
    grid: Vec<(u32, u32)>,
    #[serde(default)]
    space: PlanSpace,
    #[serde(default)]
    tokens: TokenRule,
    #[serde(default)]
    timings: Option<PathBuf>,
    #[serde(default)]
    profiles: Vec<PathBuf>,
    #[serde(default)]
    cost: CostOptions,
    #[serde(default)]
    scope: GraphScope,
}

pub fn run(args: Args, profile_dir: Option<&Path>) -> Result<()> {
    match args.mode {
        Mode::Naive {
            compute,
            gpus,
            days,
            peak_flops,
        } => {
            let c = match (compute, gpus, days) {
                (Some(c), _, _) => c,
                (None, Some(g), Some(d)) => compute_budget(g, peak_flops, d),
                _ => return Err(invalid("give --compute or both --gpus and --days")),
            };
            let n = chinchilla_naive(c)?;
            println!("compute  {c:.4e} FLOPs");
            println!("params   {:.4e} ({:.1}B)", n.params, n.params / 1e9);
            println!("tokens   {:.4e} ({:.1}B)", n.tokens, n.tokens / 1e9);
            Ok(())
        }
        Mode::Effective {
            config,
            timings,
            out,
        } => effective(&config, timings, out.as_deref(), profile_dir),
    }
}

#[derive(Deserialize)]
struct TimingRow {
    hidden: u32,
    layers: u32,
    t: u32,
    d: u32,
    p: u32,
    iter_time_s: f64,
}

type TimingKey = (u32, u32, u32, u32, u32);

fn load_timings(path: &Path) -> Result<HashMap<TimingKey, f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| invalid(format!("timings {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (i, row) in reader.deserialize::<TimingRow>().enumerate() {
        let r =
            row.map_err(|e| invalid(format!("timings {} line {}: {e}", path.display(), i + 2)))?;
        if !(r.iter_time_s > 0.0) {
            return Err(invalid(format!(
                "timings {} line {}: iter_time_s must be positive",
                path.display(),
                i + 2
            )));
        }
        map.insert((r.hidden, r.layers, r.t, r.d, r.p), r.iter_time_s);
    }
    Ok(map)
}

fn effective(
    path: &Path,
    timings_flag: Option<PathBuf>,
    out_path: Option<&Path>,
    profile_dir: Option<&Path>,
) -> Result<()> {
    let (cfg, base): (EffectiveConfig, _) = config::load_config(path)?;
    let hw = config::hardware(cfg.hardware, &base)?;
    if cfg.grid.is_empty() {
        return Err(invalid("config: grid is empty"));
    }
    if !(cfg.days_budget > 0.0) || cfg.gpus == 0 {
        return Err(invalid("config: gpus and days_budget must be positive"));
    }
    let timings_path = timings_flag.or(cfg.timings.map(|p| base.join(p)));
    let report = match timings_path {
        Some(tp) => {
            let table = load_timings(&tp)?;
            let lookup = |m: &ModelConfig, plan: &ParallelPlan| -> plansim_core::Result<f64> {
                let (t, d, p) = plan.triple();
                table
                    .get(&(m.hidden_size, m.num_layers, t, d, p))
                    .copied()
                    .ok_or_else(|| {
                        Error::Config(format!("no injected timing for {} {plan}", m.name))
                    })
            };
            chinchilla_effective(
                &hw,
                cfg.gpus,
                cfg.days_budget,
                &cfg.grid,
                &cfg.space,
                cfg.tokens,
                &lookup,
            )
        }
        None => {
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
            chinchilla_effective(
                &hw,
                cfg.gpus,
                cfg.days_budget,
                &cfg.grid,
                &cfg.space,
                cfg.tokens,
                &sim,
            )
        }
    }
    .context("chinchilla")?;
    let mut out = Outputs::default();
    out.add(out_path, config::to_json(&report)?);
    print!("{}", table(&report));
    out.commit()
}

fn table(r: &ChinchillaReport) -> String {
    let mut s =
        String::from("hidden | layers | params (B) | tokens (B) | (t, d, p) | days | fits\n");
    for p in &r.points {
        let chosen = r
            .selected
            .as_ref()
            .is_some_and(|sel| (sel.hidden, sel.layers) == (p.hidden, p.layers));
        s += &format!(
            "{} | {} | {:.1} | {:.0} | {} | {} | {}{}\n",
            p.hidden,
            p.layers,
            p.params as f64 / 1e9,
            p.tokens as f64 / 1e9,
            p.best_plan
                .as_ref()
                .map(|pl| pl.to_string())
                .unwrap_or_else(|| "-".into()),
            p.est_days
                .map(|d| format!("{d:.1}"))
                .unwrap_or_else(|| "-".into()),
            if p.feasible { "yes" } else { "no" },
            if chosen { "  <- selected" } else { "" }
        );
    }
    match &r.selected {
        Some(sel) => s += &format!("selected: hidden {} layers {}\n", sel.hidden, sel.layers),
        None => s += "selected: none fits the budget\n",
    }
    for d in &r.diagnostics {
        s += &format!("note: {d}\n");
    }
    s
}
