use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explorer::{IterationEstimator, PlanSpace};
use crate::model::{HardwareSpec, ModelConfig, ParallelPlan, Schedule};

/// A trainable model with its batch size and the smallest tensor/pipeline
/// degrees it fits with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: String,
    pub model: ModelConfig,
    pub global_batch: u64,
    pub min_tensor: u32,
    pub min_pipeline: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub models: Vec<CatalogEntry>,
}

impl Catalog {
    /// 18.4B, 39.1B and 81.2B GPT models.
    pub fn gpt_trio() -> Self {
        let entry = |id: &str, h, l, heads, batch, t, p| CatalogEntry {
            id: id.to_string(),
            model: ModelConfig::new(id, h, l, heads, 2048),
            global_batch: batch,
            min_tensor: t,
            min_pipeline: p,
        };
        Catalog {
            models: vec![
                entry("gpt-18.4b", 6144, 40, 48, 1024, 8, 1),
                entry("gpt-39.1b", 8192, 48, 64, 1536, 8, 2),
                entry("gpt-81.2b", 10240, 64, 80, 1792, 8, 4),
            ],
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let catalog: Catalog = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("catalog has no models".into()));
        }
        for (i, e) in self.models.iter().enumerate() {
            e.model.validate()?;
            if self.models[..i].iter().any(|o| o.id == e.id) {
                return Err(Error::Config(format!("duplicate catalog id {}", e.id)));
            }
            e.baseline_plan(1).validate(&e.model).map_err(|err| {
                Error::Config(format!(
                    "{}: minimum degrees ({}, {}) invalid: {err}",
                    e.id, e.min_tensor, e.min_pipeline
                ))
            })?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&CatalogEntry> {
        self.models.iter().find(|e| e.id == id)
    }
}

impl CatalogEntry {
    pub fn baseline_plan(&self, d: u32) -> ParallelPlan {
        ParallelPlan::new(self.min_tensor, d, self.min_pipeline, self.global_batch)
    }

    fn space(&self) -> PlanSpace {
        PlanSpace {
            global_batch: self.global_batch,
            micro_batch: 1,
            schedule: Schedule::OneFOneB,
            grad_buckets: 1,
            memory_filter: true,
            even_stages: true,
            tp_within_node: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMode {
    /// Minimum tensor/pipeline degrees, data parallelism only.
    Baseline,
    /// Best plan at each GPU count.
    Optimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Iterations per second.
    pub throughput: f64,
    pub plan: ParallelPlan,
}

/// Throughput of one model as a function of granted GPUs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputCurve {
    pub model_id: String,
    pub mode: CurveMode,
    pub points: BTreeMap<u64, CurvePoint>,
}

impl ThroughputCurve {
    /// Throughput achievable with `g` GPUs, leaving any excess idle.
    pub fn throughput_at(&self, g: u64) -> f64 {
        self.points
            .range(..=g)
            .map(|(_, p)| p.throughput)
            .fold(0.0, f64::max)
    }

    pub fn min_gpus(&self) -> Option<u64> {
        self.points.keys().next().copied()
    }

    pub fn max_gpus(&self) -> Option<u64> {
        self.points.keys().next_back().copied()
    }

    /// Drops points no faster than a smaller allocation.
    pub fn envelope(mut self) -> Self {
        let mut best = 0.0;
        self.points.retain(|_, p| {
            let keep = p.throughput > best;
            if keep {
                best = p.throughput;
            }
            keep
        });
        self
    }
}

pub type CurveSet = BTreeMap<String, ThroughputCurve>;

fn baseline_plans(e: &CatalogEntry, total_gpus: u64) -> Vec<ParallelPlan> {
    let tp = e.min_tensor as u64 * e.min_pipeline as u64;
    (1..=(total_gpus / tp) as u32)
        .map(|d| e.baseline_plan(d))
        .filter(|plan| plan.validate(&e.model).is_ok())
        .collect()
}

fn optimal_plans(e: &CatalogEntry, hw: &HardwareSpec, total_gpus: u64) -> Vec<ParallelPlan> {
    let space = e.space();
    let mut plans = baseline_plans(e, total_gpus);
    for t in 1..=hw.gpus_per_node {
        for p in 1..=e.model.num_layers {
            let tp = t as u64 * p as u64;
            if tp > total_gpus {
                break;
            }
            for d in 1..=(total_gpus / tp) as u32 {
                let plan = space.plan(t, d, p);
                if !plans.contains(&plan) && space.check(&e.model, hw, &plan).is_ok() {
                    plans.push(plan);
                }
            }
        }
    }
    plans
}

/// Measures each catalog model's throughput curve up to `total_gpus`.
/// Optimal curves search a superset of the baseline plans.
pub fn build_curves(
    catalog: &Catalog,
    hw: &HardwareSpec,
    total_gpus: u64,
    mode: CurveMode,
    estimator: &dyn IterationEstimator,
) -> Result<CurveSet> {
    let mut set = CurveSet::new();
    for e in &catalog.models {
        let plans = match mode {
            CurveMode::Baseline => baseline_plans(e, total_gpus),
            CurveMode::Optimal => optimal_plans(e, hw, total_gpus),
        };
        let timed: Vec<(ParallelPlan, f64)> = plans
            .into_par_iter()
            .filter_map(|plan| match estimator.iteration_time(&e.model, &plan) {
                Ok(t) if t > 0.0 => Some((plan, t)),
                Ok(_) => None,
                Err(err) => {
                    log::warn!("{} {plan}: {err}", e.id);
                    None
                }
            })
            .collect();
        let mut points: BTreeMap<u64, CurvePoint> = BTreeMap::new();
        for (plan, t) in timed {
            let throughput = 1.0 / t;
            let g = plan.gpus();
            let better = points.get(&g).is_none_or(|cur| {
                throughput > cur.throughput
                    || (throughput == cur.throughput && plan.triple() < cur.plan.triple())
            });
            if better {
                points.insert(g, CurvePoint { throughput, plan });
            }
        }
        if points.is_empty() {
            return Err(Error::Config(format!(
                "{}: no valid plan within {total_gpus} GPUs",
                e.id
            )));
        }
        set.insert(
            e.id.clone(),
            ThroughputCurve {
                model_id: e.id.clone(),
                mode,
                points,
            },
        );
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costdb::{CostDatabase, CostOptions};
    use crate::explorer::Simulator;

    /// Time falls with GPUs and improves with deeper tensor splits.
    fn toy_estimator(model: &ModelConfig, plan: &ParallelPlan) -> Result<f64> {
        let work = model.param_count() as f64 * 1e-9;
        let penalty = 1.0 + 0.1 * plan.pipeline as f64 / plan.tensor as f64;
        Ok(work * penalty / plan.gpus() as f64)
    }

    #[test]
    fn baseline_uses_multiples_of_minimum() {
        let catalog = Catalog::gpt_trio();
        let hw = HardwareSpec::a100_cluster();
        let curves =
            build_curves(&catalog, &hw, 1024, CurveMode::Baseline, &toy_estimator).unwrap();
        let c = &curves["gpt-39.1b"];
        assert!(c.points.keys().all(|g| g % 16 == 0));
        assert!(c
            .points
            .values()
            .all(|p| (p.plan.tensor, p.plan.pipeline) == (8, 2)));
        assert_eq!(c.min_gpus(), Some(16));
    }

    #[test]
    fn optimal_dominates_baseline() {
        let catalog = Catalog::gpt_trio();
        let hw = HardwareSpec::a100_cluster();
        let base = build_curves(&catalog, &hw, 1024, CurveMode::Baseline, &toy_estimator).unwrap();
        let opt = build_curves(&catalog, &hw, 1024, CurveMode::Optimal, &toy_estimator).unwrap();
        for (id, b) in &base {
            for (g, p) in &b.points {
                assert!(opt[id].points[g].throughput >= p.throughput, "{id} at {g}");
            }
        }
    }

    #[test]
    fn tiny_model_curves_coincide() {
        let catalog = Catalog {
            models: vec![CatalogEntry {
                id: "tiny".into(),
                model: ModelConfig::new("tiny", 64, 2, 4, 16).with_vocab(128),
                global_batch: 8,
                min_tensor: 1,
                min_pipeline: 1,
            }],
        };
        let hw = HardwareSpec::a100_cluster();
        let db = CostDatabase::analytical(hw.clone(), CostOptions::default()).unwrap();
        let sim = Simulator::new(&db);
        let base = build_curves(&catalog, &hw, 8, CurveMode::Baseline, &sim).unwrap();
        let opt = build_curves(&catalog, &hw, 8, CurveMode::Optimal, &sim).unwrap();
        let (b, o) = (&base["tiny"], &opt["tiny"]);
        assert_eq!(
            b.points.keys().collect::<Vec<_>>(),
            o.points.keys().collect::<Vec<_>>()
        );
        let mut pure = 0;
        for (g, p) in &o.points {
            assert!(p.throughput >= b.points[g].throughput);
            if (p.plan.tensor, p.plan.pipeline) == (1, 1) {
                assert_eq!(b.points[g], *p, "g={g}");
                pure += 1;
            }
        }
        assert!(pure > 0);
    }

    #[test]
    fn envelope_is_increasing() {
        let mut points = BTreeMap::new();
        for (g, thr) in [(1u64, 1.0), (2, 0.8), (4, 2.0)] {
            points.insert(
                g,
                CurvePoint {
                    throughput: thr,
                    plan: ParallelPlan::new(1, g as u32, 1, 4),
                },
            );
        }
        let c = ThroughputCurve {
            model_id: "m".into(),
            mode: CurveMode::Optimal,
            points,
        }
        .envelope();
        assert_eq!(c.points.keys().copied().collect::<Vec<_>>(), vec![1, 4]);
        assert_eq!(c.throughput_at(3), 1.0);
        assert_eq!(c.throughput_at(0), 0.0);
    }

    #[test]
    fn catalog_round_trip() {
        let catalog = Catalog::gpt_trio();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.json");
        std::fs::write(&path, serde_json::to_string_pretty(&catalog).unwrap()).unwrap();
        assert_eq!(Catalog::load(&path).unwrap(), catalog);
        let mut bad = catalog.clone();
        bad.models[0].min_tensor = 5;
        assert!(bad.validate().is_err());
    }
}
