use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::taskgraph::{Stream, TaskGraph};
use crate::error::{Error, Result};
use crate::model::{dollar_cost, TrainingRun, SECONDS_PER_DAY};

/// Largest graph the brute-force oracle accepts.
pub const ORACLE_MAX_TASKS: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceBusy {
    pub compute: f64,
    pub comm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Seconds.
    pub iter_time: f64,
    pub per_device_busy: BTreeMap<u32, DeviceBusy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_to_end_days: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utilization: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dollars: Option<f64>,
    /// Per-task execution window, indexed by task id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeline: Option<Vec<Span>>,
}

impl SimResult {
    /// Fills the end-to-end fields from `iter_time` and a training run.
    pub fn with_run(mut self, run: &TrainingRun) -> Self {
        let e2e = end_to_end(run, self.iter_time);
        self.end_to_end_days = e2e.end_to_end_days;
        self.utilization = e2e.utilization;
        self.dollars = e2e.dollars;
        self
    }
}

/// Event-driven list scheduling over the task graph: a FIFO ready queue,
/// one timeline per `(device, stream)`, and each task starting at
/// `max(stream timeline, latest parent finish)`.
pub fn simulate_iteration(tg: &TaskGraph) -> Result<SimResult> {
    run(tg, true)
}

/// Same schedule as [`simulate_iteration`] without keeping the timeline.
pub fn simulate_iteration_time(tg: &TaskGraph) -> Result<f64> {
    run(tg, false).map(|r| r.iter_time)
}

fn run(tg: &TaskGraph, record: bool) -> Result<SimResult> {
    let n = tg.len();
    let mut refs: Vec<u32> = (0..n as u32).map(|id| tg.initial_ref(id)).collect();
    let mut ready = vec![0.0f64; n];
    let mut clock = vec![0.0f64; tg.streams().len()];
    let mut busy = vec![0.0f64; tg.streams().len()];
    let mut spans = if record {
        vec![
            Span {
                start: 0.0,
                end: 0.0
            };
            n
        ]
    } else {
        Vec::new()
    };
    let mut queue: VecDeque<u32> = (0..n as u32).filter(|&id| refs[id as usize] == 0).collect();
    let mut done = 0usize;

    while let Some(u) = queue.pop_front() {
        done += 1;
        let task = tg.task(u);
        let s = tg.stream_index(u);
        let start = ready[u as usize].max(clock[s]);
        let end = start + task.duration;
        clock[s] = end;
        busy[s] += task.duration;
        if record {
            spans[u as usize] = Span { start, end };
        }
        let mut release = |c: u32, queue: &mut VecDeque<u32>| {
            let c = c as usize;
            if ready[c] < end {
                ready[c] = end;
            }
            refs[c] -= 1;
            if refs[c] == 0 {
                queue.push_back(c as u32);
            }
        };
        for &c in tg.children(u) {
            release(c, &mut queue);
        }
        if let Some(next) = tg.stream_next(u) {
            release(next, &mut queue);
        }
    }

    if done < n {
        let stuck = refs
            .iter()
            .position(|&r| r > 0)
            .expect("unfinished task has pending refs");
        return Err(Error::Cycle {
            task: stuck,
            label: tg.label(stuck as u32).to_string(),
        });
    }

    let mut per_device_busy: BTreeMap<u32, DeviceBusy> = BTreeMap::new();
    for (i, &(device, stream)) in tg.streams().iter().enumerate() {
        let entry = per_device_busy.entry(device).or_default();
        match stream {
            Stream::Compute => entry.compute += busy[i],
            Stream::Comm => entry.comm += busy[i],
        }
    }
    Ok(SimResult {
        iter_time: clock.iter().copied().fold(0.0, f64::max),
        per_device_busy,
        timeline: record.then_some(spans),
        ..SimResult::default()
    })
}

/// Test oracle: the makespan as the longest path through the constraint
/// graph of data edges plus stream-order edges, evaluated by memoized
/// recursion.
pub fn brute_force_makespan(tg: &TaskGraph) -> Result<f64> {
    let n = tg.len();
    if n > ORACLE_MAX_TASKS {
        return Err(Error::OracleTooLarge(n, ORACLE_MAX_TASKS));
    }
    let mut parents: Vec<Vec<u32>> = vec![Vec::new(); n];
    for u in 0..n as u32 {
        for &c in tg.children(u) {
            parents[c as usize].push(u);
        }
        if let Some(next) = tg.stream_next(u) {
            parents[next as usize].push(u);
        }
    }
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        Active,
        Done(f64),
    }
    fn finish(u: usize, tg: &TaskGraph, parents: &[Vec<u32>], memo: &mut [Mark]) -> Result<f64> {
        match memo[u] {
            Mark::Done(f) => return Ok(f),
            Mark::Active => {
                return Err(Error::Cycle {
                    task: u,
                    label: tg.label(u as u32).to_string(),
                })
            }
            Mark::Fresh => {}
        }
        memo[u] = Mark::Active;
        let mut start = 0.0f64;
        for &p in &parents[u] {
            start = start.max(finish(p as usize, tg, parents, memo)?);
        }
        let f = start + tg.task(u as u32).duration;
        memo[u] = Mark::Done(f);
        Ok(f)
    }
    let mut memo = vec![Mark::Fresh; n];
    let mut makespan = 0.0f64;
    for u in 0..n {
        makespan = makespan.max(finish(u, tg, &parents, &mut memo)?);
    }
    Ok(makespan)
}

/// Scales one iteration to a full training run.
pub fn end_to_end(run: &TrainingRun, iter_time: f64) -> SimResult {
    let iterations = run.iterations() as f64;
    let gpus = run.plan.gpus();
    let wall = iter_time * iterations;
    let peak = iter_time * gpus as f64 * run.hw.peak_flops;
    SimResult {
        iter_time,
        end_to_end_days: Some(wall / SECONDS_PER_DAY),
        utilization: Some(if peak > 0.0 {
            run.flops_per_iteration() / peak
        } else {
            0.0
        }),
        dollars: Some(dollar_cost(wall, gpus, run.hw.dollars_per_gpu_hour)),
        ..SimResult::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::taskgraph::TaskGraphBuilder;
    use crate::model::{HardwareSpec, ModelConfig, ParallelPlan};
    use proptest::prelude::*;

    fn both(tg: &TaskGraph) -> f64 {
        let sim = simulate_iteration(tg).unwrap().iter_time;
        assert_eq!(sim, brute_force_makespan(tg).unwrap());
        sim
    }

    #[test]
    fn serialization_on_one_stream() {
        let mut b = TaskGraphBuilder::new();
        b.add_task(0, Stream::Compute, 0.010, "a");
        b.add_task(0, Stream::Compute, 0.005, "b");
        assert!((both(&b.build().unwrap()) - 0.015).abs() < 1e-15);
    }

    #[test]
    fn cross_device_chain() {
        let mut b = TaskGraphBuilder::new();
        let a = b.add_task(0, Stream::Compute, 0.010, "a");
        let c = b.add_task(1, Stream::Compute, 0.005, "b");
        b.add_edge(a, c);
        assert!((both(&b.build().unwrap()) - 0.015).abs() < 1e-15);
    }

    #[test]
    fn diamond() {
        let mut b = TaskGraphBuilder::new();
        let a = b.add_task(0, Stream::Compute, 2.0, "A");
        let bb = b.add_task(0, Stream::Compute, 3.0, "B");
        let c = b.add_task(1, Stream::Compute, 4.0, "C");
        let d = b.add_task(1, Stream::Compute, 1.0, "D");
        for (x, y) in [(a, bb), (a, c), (bb, d), (c, d)] {
            b.add_edge(x, y);
        }
        let tg = b.build().unwrap();
        let r = simulate_iteration(&tg).unwrap();
        let tl = r.timeline.as_ref().unwrap();
        assert_eq!(tl[bb as usize].end, 5.0);
        assert_eq!(tl[c as usize].end, 6.0);
        assert_eq!(tl[d as usize].start, 6.0);
        assert_eq!(both(&tg), 7.0);
        assert_eq!(r.per_device_busy[&0].compute, 5.0);
        assert_eq!(r.per_device_busy[&1].compute, 5.0);
    }

    #[test]
    fn trivial_graphs() {
        assert_eq!(both(&TaskGraphBuilder::new().build().unwrap()), 0.0);
        let mut b = TaskGraphBuilder::new();
        b.add_task(3, Stream::Comm, 1.25, "x");
        assert_eq!(both(&b.build().unwrap()), 1.25);
    }

    #[test]
    fn cycle_reported() {
        let mut b = TaskGraphBuilder::new();
        let x = b.add_task(0, Stream::Compute, 1.0, "x");
        let y = b.add_task(1, Stream::Compute, 1.0, "y");
        b.add_edge(x, y);
        b.add_edge(y, x);
        let tg = b.build().unwrap();
        assert!(matches!(
            simulate_iteration(&tg),
            Err(Error::Cycle { task: 0, .. })
        ));
        assert!(matches!(
            brute_force_makespan(&tg),
            Err(Error::Cycle { .. })
        ));
    }

    #[test]
    fn oracle_size_guard() {
        let mut b = TaskGraphBuilder::new();
        for _ in 0..=ORACLE_MAX_TASKS {
            b.add_task(0, Stream::Compute, 1.0, "t");
        }
        assert!(matches!(
            brute_force_makespan(&b.build().unwrap()),
            Err(Error::OracleTooLarge(..))
        ));
    }

    #[test]
    fn mtnlg_reference_end_to_end() {
        let model = ModelConfig::new("mt-nlg", 20480, 105, 160, 2048);
        let run = TrainingRun {
            model,
            plan: ParallelPlan::new(8, 8, 35, 1920),
            hw: HardwareSpec::a100_cluster(),
            total_tokens: 0,
            iterations_override: Some(68_000),
        };
        let r = end_to_end(&run, 45.40);
        assert!((r.end_to_end_days.unwrap() - 35.73).abs() < 0.01);
        let r = end_to_end(&run, 48.37);
        assert!((r.end_to_end_days.unwrap() - 38.07).abs() < 0.01);
        let u = end_to_end(&run, 45.40).utilization.unwrap();
        assert!((u - 0.394).abs() < 0.002, "{u}");
    }

    fn random_graph(seed: u64, n: usize) -> TaskGraph {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut b = TaskGraphBuilder::new();
        for _ in 0..n {
            let stream = if rng.gen_bool(0.5) {
                Stream::Compute
            } else {
                Stream::Comm
            };
            b.add_task(
                rng.gen_range(0..4),
                stream,
                rng.gen_range(0..100) as f64 * 0.25,
                "t",
            );
        }
        for v in 1..n as u32 {
            for u in 0..v {
                if rng.gen_bool(0.15) {
                    b.add_edge(u, v);
                }
            }
        }
        b.build().unwrap()
    }

    proptest! {
        #[test]
        fn adding_edge_never_helps(seed in any::<u64>(), n in 2usize..30, pick in any::<(u32, u32)>()) {
            let tg = random_graph(seed, n);
            let base = simulate_iteration_time(&tg).unwrap();
            let (mut u, mut v) = (pick.0 % n as u32, pick.1 % n as u32);
            if u == v { return Ok(()); }
            if u > v { std::mem::swap(&mut u, &mut v); }
            let mut b = TaskGraphBuilder::new();
            for id in 0..n as u32 {
                let t = tg.task(id);
                b.add_task(t.device, t.stream, t.duration, "t");
            }
            for x in 0..n as u32 {
                for &c in tg.children(x) { b.add_edge(x, c); }
            }
            b.add_edge(u, v);
            prop_assert!(simulate_iteration_time(&b.build().unwrap()).unwrap() >= base);
        }

        #[test]
        fn scaling_durations_scales_makespan(seed in any::<u64>(), n in 1usize..30, k in 1u32..8) {
            let tg = random_graph(seed, n);
            let base = simulate_iteration_time(&tg).unwrap();
            let mut b = TaskGraphBuilder::new();
            for id in 0..n as u32 {
                let t = tg.task(id);
                b.add_task(t.device, t.stream, t.duration * k as f64, "t");
            }
            for x in 0..n as u32 {
                for &c in tg.children(x) { b.add_edge(x, c); }
            }
            // Quarter-step durations keep the sums exact.
            prop_assert_eq!(simulate_iteration_time(&b.build().unwrap()).unwrap(), base * k as f64);
        }

        #[test]
        fn deterministic_timeline(seed in any::<u64>(), n in 1usize..40) {
            let tg = random_graph(seed, n);
            prop_assert_eq!(simulate_iteration(&tg).unwrap(), simulate_iteration(&tg).unwrap());
        }
    }
}
