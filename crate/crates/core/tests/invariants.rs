//! Cross-module invariants, checked on random small configurations.

mod common;

use plansim_core::cluster::{synthetic_trace, CatalogEntry, TraceParams};
use plansim_core::engine::end_to_end;
use plansim_core::explorer::sweep;
use plansim_core::opgraph::{build_operator_graph_with, validate_graph};
use plansim_core::{
    build_curves, compare_modes, Catalog, ClusterConfig, CostDatabase, CostOptions, CurveMode,
    GraphScope, HardwareSpec, ParallelPlan, PlanSpace, Schedule, Simulator, SweepBounds,
    TrainingLength, TrainingRun,
};
use proptest::prelude::*;

use common::{run, small_model, UniformStages};

fn plan_strategy() -> impl Strategy<Value = (u32, ParallelPlan)> {
    (
        1u32..=6,
        prop::sample::select(vec![1u32, 2, 4]),
        1u32..=3,
        1u32..=6,
        1u64..=4,
        1u32..=3,
        any::<bool>(),
    )
        .prop_filter_map(
            "pipeline deeper than the model",
            |(layers, t, d, p, m, k, gpipe)| {
                (p <= layers).then(|| {
                    let schedule = if gpipe {
                        Schedule::GPipe
                    } else {
                        Schedule::OneFOneB
                    };
                    (
                        layers,
                        ParallelPlan::new(t, d, p, m * d as u64)
                            .with_buckets(k)
                            .with_schedule(schedule),
                    )
                })
            },
        )
}

fn analytical() -> CostDatabase {
    CostDatabase::analytical(HardwareSpec::a100_cluster(), CostOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn operator_graphs_are_well_formed((layers, plan) in plan_strategy()) {
        let model = small_model(layers);
        let g = build_operator_graph_with(&model, &plan, GraphScope::Full).unwrap();
        prop_assert!(validate_graph(&g).is_empty(), "{:?}", validate_graph(&g));
        for node in &g.nodes {
            if node.kind.is_comm() {
                prop_assert!(node.comm_bytes() > 0 && node.comm_group_size() >= 2, "{node:?}");
            } else {
                prop_assert_eq!(node.comm_bytes(), 0);
            }
            let range = g.layer_range(node);
            prop_assert!(range.end <= layers);
            prop_assert_eq!(range, g.stage_layers(node.stage));
        }
    }

    #[test]
    fn iteration_covers_busiest_device((layers, plan) in plan_strategy()) {
        let model = small_model(layers);
        let db = analytical();
        let r = run(&model, &plan, &db);
        let result = plansim_core::simulate_iteration(&r.tasks).unwrap();
        let busiest = result.per_device_busy.values().map(|b| b.compute).fold(0.0, f64::max);
        prop_assert!(result.iter_time >= busiest);
        let training = TrainingRun {
            model,
            plan,
            hw: HardwareSpec::a100_cluster(),
            total_tokens: 1 << 30,
            iterations_override: None,
        };
        let u = end_to_end(&training, result.iter_time).utilization.unwrap();
        prop_assert!((0.0..=1.0).contains(&u), "utilization {u}");
    }

    #[test]
    fn uniform_pipeline_closed_form(p in 1u32..=8, m in 1u64..=8, f in 1u32..=8, b in 1u32..=8) {
        // Quarter steps keep every sum exact.
        let (f, b) = (f as f64 * 0.25, b as f64 * 0.25);
        let cost = UniformStages { fwd: f, bwd: b, hw: HardwareSpec::a100_cluster() };
        let plan = ParallelPlan::new(1, 1, p, m);
        let gpipe = run(&small_model(p), &plan.clone().with_schedule(Schedule::GPipe), &cost);
        let ofob = run(&small_model(p), &plan.with_schedule(Schedule::OneFOneB), &cost);
        prop_assert_eq!(gpipe.iter_time, (p as f64 + m as f64 - 1.0) * (f + b));
        prop_assert_eq!(ofob.iter_time, gpipe.iter_time);
        prop_assert!(ofob.peak_in_flight() <= p as usize);
        prop_assert!(gpipe.peak_in_flight() <= m as usize);
    }

    #[test]
    fn sweep_rows_price_consistently(layers in 1u32..=4, batch in 1u64..=8) {
        let db = analytical();
        let sim = Simulator::new(&db);
        let hw = HardwareSpec::a100_cluster();
        let space = PlanSpace { global_batch: batch, ..PlanSpace::default() };
        let points = sweep(&small_model(layers), &hw, SweepBounds::new(2, 2, 2), &space, TrainingLength::Iterations(100), &sim);
        prop_assert_eq!(points.len(), 8);
        for pt in &points {
            prop_assert_eq!(pt.gpus, pt.plan.gpus());
            prop_assert!((pt.dollars_per_hour - pt.gpus as f64 * hw.dollars_per_gpu_hour).abs() < 1e-9);
            if let (Some(days), Some(total)) = (pt.days, pt.dollars_total) {
                prop_assert!((total - days * 24.0 * pt.dollars_per_hour).abs() <= 1e-9 * total.max(1.0));
            }
            prop_assert_eq!(pt.valid, pt.iter_time.is_some());
        }
    }
}

fn toy_catalog() -> Catalog {
    let entry = |id: &str, hidden, heads, seq, vocab, t| CatalogEntry {
        id: id.into(),
        model: plansim_core::ModelConfig::new(id, hidden, 4, heads, seq).with_vocab(vocab),
        global_batch: 16,
        min_tensor: t,
        min_pipeline: 1,
    };
    Catalog {
        models: vec![
            entry("tiny-a", 64, 4, 16, 128, 1),
            entry("tiny-b", 128, 8, 32, 256, 2),
        ],
    }
}

#[test]
fn optimal_curves_dominate_and_allocations_fit() {
    let hw = HardwareSpec::a100_cluster();
    let db = CostDatabase::analytical(hw.clone(), CostOptions::default()).unwrap();
    let sim = Simulator::new(&db);
    let catalog = toy_catalog();
    let total = 16;
    let baseline = build_curves(&catalog, &hw, total, CurveMode::Baseline, &sim).unwrap();
    let optimal = build_curves(&catalog, &hw, total, CurveMode::Optimal, &sim).unwrap();
    for (id, base) in &baseline {
        for (g, pt) in &base.points {
            assert!(
                optimal[id].throughput_at(*g) >= pt.throughput,
                "{id} at {g} GPUs"
            );
        }
    }

    let ids: Vec<String> = catalog.models.iter().map(|e| e.id.clone()).collect();
    for seed in 0..8 {
        let params = TraceParams {
            jobs: 12,
            mean_interarrival_s: 0.01,
            min_iterations: 1000,
            max_iterations: 20_000,
        };
        let trace = synthetic_trace(seed, &params, &ids).unwrap();
        for deadline_mode in [true, false] {
            let (b, o) = compare_modes(
                &trace,
                &baseline,
                &optimal,
                ClusterConfig {
                    total_gpus: total,
                    deadline_mode,
                },
            )
            .unwrap();
            for result in [&b, &o] {
                for epoch in &result.epochs {
                    assert!(epoch.allocations.iter().map(|a| a.1).sum::<u64>() <= total);
                }
                for job in &result.jobs {
                    let iterations =
                        trace.iter().find(|j| j.id == job.id).unwrap().iterations as f64;
                    assert!(
                        job.work_done >= 0.0 && job.work_done <= iterations * (1.0 + 1e-9),
                        "{job:?}"
                    );
                }
            }
        }
    }
}
