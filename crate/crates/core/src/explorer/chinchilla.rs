use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{IterationEstimator, PlanSpace};
use crate::error::{Error, Result};
use crate::model::{
    iterations_for_tokens, tokens_per_iteration, HardwareSpec, ModelConfig, ParallelPlan,
};

pub const CHINCHILLA_ALPHA: f64 = 0.089;
pub const CHINCHILLA_BETA: f64 = 1.875;
pub const TOKENS_PER_PARAM: u64 = 20;

const HEAD_DIM: u32 = 128;
const GRID_SEQ_LEN: u32 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveChinchilla {
    pub params: f64,
    pub tokens: f64,
}

/// `N = alpha sqrt(C)`, `T = beta sqrt(C)`.
pub fn chinchilla_naive(compute: f64) -> Result<NaiveChinchilla> {
    if !(compute > 0.0 && compute.is_finite()) {
        return Err(Error::Config(format!(
            "compute budget must be positive, got {compute}"
        )));
    }
    let root = compute.sqrt();
    Ok(NaiveChinchilla {
        params: CHINCHILLA_ALPHA * root,
        tokens: CHINCHILLA_BETA * root,
    })
}

/// Peak FLOPs of `gpus` devices over `days`.
pub fn compute_budget(gpus: u64, peak_flops: f64, days: f64) -> f64 {
    gpus as f64 * peak_flops * days * 86_400.0
}

/// Grid model with 128-wide heads and 2048-token sequences.
pub fn grid_model(hidden: u32, layers: u32) -> ModelConfig {
    ModelConfig::new(
        format!("h{hidden}-l{layers}"),
        hidden,
        layers,
        (hidden / HEAD_DIM).max(1),
        GRID_SEQ_LEN,
    )
}

/// Training tokens assigned to a grid point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRule {
    /// `T = 20 N`.
    #[default]
    PerParam,
    /// `T = beta sqrt(C)` for a fixed compute budget.
    Scaling { compute: f64 },
}

impl TokenRule {
    pub fn tokens(&self, params: u64) -> u64 {
        match *self {
            TokenRule::PerParam => TOKENS_PER_PARAM * params,
            TokenRule::Scaling { compute } => (CHINCHILLA_BETA * compute.sqrt()).round() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChinchillaPoint {
    pub hidden: u32,
    pub layers: u32,
    pub params: u64,
    pub tokens: u64,
    pub best_plan: Option<ParallelPlan>,
    pub iter_time: Option<f64>,
    pub est_days: Option<f64>,
    pub feasible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChinchillaReport {
    /// Largest model first.
    pub points: Vec<ChinchillaPoint>,
    pub selected: Option<ChinchillaPoint>,
    pub diagnostics: Vec<String>,
}

/// Every plan of `space` with `t * d * p <= gpus` that passes its screens.
fn candidate_plans(
    model: &ModelConfig,
    hw: &HardwareSpec,
    gpus: u64,
    space: &PlanSpace,
) -> Vec<ParallelPlan> {
    let mut out = Vec::new();
    let replicas_max = space.global_batch / space.micro_batch.max(1);
    for t in 1..=model.num_heads {
        if t as u64 > gpus {
            break;
        }
        for p in 1..=model.num_layers {
            let tp = t as u64 * p as u64;
            if tp > gpus {
                break;
            }
            let d_max = (gpus / tp).min(replicas_max);
            for d in 1..=d_max as u32 {
                let plan = space.plan(t, d, p);
                if space.check(model, hw, &plan).is_ok() {
                    out.push(plan);
                }
            }
        }
    }
    out
}

/// Compute-optimal sizing under effective throughput: for each `(h, L)` grid
/// point, find the fastest plan within `gpus` and check whether training on
/// the rule's token count fits in `days_budget`.
pub fn chinchilla_effective(
    hw: &HardwareSpec,
    gpus: u64,
    days_budget: f64,
    grid: &[(u32, u32)],
    space: &PlanSpace,
    rule: TokenRule,
    estimator: &dyn IterationEstimator,
) -> Result<ChinchillaReport> {
    if grid.is_empty() {
        return Err(Error::Config("empty model grid".into()));
    }
    let mut points: Vec<ChinchillaPoint> = grid
        .iter()
        .map(|&(hidden, layers)| {
            let model = grid_model(hidden, layers);
            let params = model.param_count();
            let tokens = rule.tokens(params);
            let mut point = ChinchillaPoint {
                hidden,
                layers,
                params,
                tokens,
                best_plan: None,
                iter_time: None,
                est_days: None,
                feasible: false,
                note: None,
            };
            if let Err(e) = model.validate() {
                point.note = Some(e.to_string());
                return point;
            }
            let plans = candidate_plans(&model, hw, gpus, space);
            if plans.is_empty() {
                point.note = Some(format!("no valid plan within {gpus} GPUs"));
                return point;
            }
            let timed: Vec<(ParallelPlan, Result<f64>)> = plans
                .into_par_iter()
                .map(|plan| {
                    let t = estimator.iteration_time(&model, &plan);
                    (plan, t)
                })
                .collect();
            let best = timed
                .iter()
                .filter_map(|(plan, t)| t.as_ref().ok().map(|&t| (plan, t)))
                .min_by(|a, b| {
                    a.1.total_cmp(&b.1)
                        .then(a.0.gpus().cmp(&b.0.gpus()))
                        .then(a.0.triple().cmp(&b.0.triple()))
                });
            match best {
                Some((plan, iter_time)) => {
                    let iterations =
                        iterations_for_tokens(tokens, tokens_per_iteration(plan, &model));
                    let days = iter_time * iterations as f64 / 86_400.0;
                    point.best_plan = Some(plan.clone());
                    point.iter_time = Some(iter_time);
                    point.est_days = Some(days);
                    point.feasible = days <= days_budget;
                }
                None => {
                    let first = timed
                        .into_iter()
                        .find_map(|(_, t)| t.err())
                        .map(|e| e.to_string());
                    point.note = Some(format!("every plan failed: {}", first.unwrap_or_default()));
                }
            }
            point
        })
        .collect();
    points.sort_by(|a, b| {
        b.params
            .cmp(&a.params)
            .then(a.hidden.cmp(&b.hidden))
            .then(a.layers.cmp(&b.layers))
    });

    let selected = points.iter().find(|p| p.feasible).cloned();
    let mut diagnostics: Vec<String> = points
        .iter()
        .filter_map(|p| {
            p.note
                .as_ref()
                .map(|n| format!("h={} L={}: {n}", p.hidden, p.layers))
        })
        .collect();
    if selected.is_none() {
        let fastest = points
            .iter()
            .filter_map(|p| p.est_days)
            .fold(f64::INFINITY, f64::min);
        diagnostics.push(format!(
            "no grid point trains within {days_budget} days (fastest needs {fastest:.1})"
        ));
    }
    Ok(ChinchillaReport {
        points,
        selected,
        diagnostics,
    })
}
