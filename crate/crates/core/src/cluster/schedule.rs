use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::catalog::{CurveSet, ThroughputCurve};
use super::trace::Job;
use crate::error::{Error, Result};

pub const DEFAULT_TOTAL_GPUS: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub total_gpus: u64,
    /// Admit a job only if every admitted job can still meet its deadline.
    pub deadline_mode: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            total_gpus: DEFAULT_TOTAL_GPUS,
            deadline_mode: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Running,
    Completed,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub id: u64,
    pub model_id: String,
    pub state: JobState,
    pub arrival: f64,
    pub deadline: f64,
    pub completion: Option<f64>,
    pub jct: Option<f64>,
    pub deadline_met: bool,
    /// Iterations accumulated as throughput times interval.
    pub work_done: f64,
}

/// Allocation held constant over `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub start: f64,
    pub end: f64,
    /// `(job id, GPUs)` for jobs holding GPUs.
    pub allocations: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub jobs: usize,
    pub completed: usize,
    pub terminated: usize,
    pub deadlines_met: usize,
    pub deadline_ratio: f64,
    pub avg_jct: f64,
    pub makespan: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub config: ClusterConfig,
    pub jobs: Vec<JobOutcome>,
    pub metrics: Metrics,
    pub epochs: Vec<Epoch>,
}

pub fn metrics(jobs: &[JobOutcome]) -> Metrics {
    let completed: Vec<&JobOutcome> = jobs
        .iter()
        .filter(|j| j.state == JobState::Completed)
        .collect();
    let deadlines_met = jobs.iter().filter(|j| j.deadline_met).count();
    let avg_jct = if completed.is_empty() {
        0.0
    } else {
        completed.iter().filter_map(|j| j.jct).sum::<f64>() / completed.len() as f64
    };
    let makespan = match (
        completed
            .iter()
            .filter_map(|j| j.completion)
            .reduce(f64::max),
        jobs.iter().map(|j| j.arrival).reduce(f64::min),
    ) {
        (Some(last), Some(first)) => last - first,
        _ => 0.0,
    };
    Metrics {
        jobs: jobs.len(),
        completed: completed.len(),
        terminated: jobs
            .iter()
            .filter(|j| j.state == JobState::Terminated)
            .count(),
        deadlines_met,
        deadline_ratio: if jobs.is_empty() {
            0.0
        } else {
            deadlines_met as f64 / jobs.len() as f64
        },
        avg_jct,
        makespan,
    }
}

struct Live<'a> {
    job: &'a Job,
    curve: &'a ThroughputCurve,
    deadline: f64,
    remaining: f64,
    gpus: u64,
    state: JobState,
    completion: Option<f64>,
    work_done: f64,
}

impl Live<'_> {
    fn throughput(&self) -> f64 {
        self.curve.throughput_at(self.gpus)
    }

    /// Smallest curve allocation that finishes the remaining work by the deadline.
    fn deadline_minimum(&self, now: f64) -> Option<u64> {
        let slack = self.deadline - now;
        let tol = 1e-9 * self.deadline.abs().max(1.0);
        self.curve.points.iter().map(|(&g, _)| g).find(|&g| {
            let thr = self.curve.throughput_at(g);
            thr > 0.0 && self.remaining / thr <= slack + tol
        })
    }

    fn floor(&self, now: f64, deadline_mode: bool) -> u64 {
        let fallback = self.curve.min_gpus().unwrap_or(0);
        if deadline_mode {
            self.deadline_minimum(now).unwrap_or(fallback)
        } else {
            fallback
        }
    }

    fn active(&self) -> bool {
        matches!(self.state, JobState::Pending | JobState::Running)
    }
}

/// Baseline run that a guided run must match or beat job by job.
struct Guide<'a> {
    epochs: &'a [Epoch],
    terminated: HashSet<u64>,
    cursor: usize,
}

impl<'a> Guide<'a> {
    fn new(result: &'a ScheduleResult) -> Self {
        let terminated = result
            .jobs
            .iter()
            .filter(|j| j.state == JobState::Terminated)
            .map(|j| j.id)
            .collect();
        Guide {
            epochs: &result.epochs,
            terminated,
            cursor: 0,
        }
    }

    fn seek(&mut self, now: f64) -> Option<&'a Epoch> {
        while self.cursor < self.epochs.len() && self.epochs[self.cursor].end <= now {
            self.cursor += 1;
        }
        self.epochs.get(self.cursor).filter(|e| e.start <= now)
    }

    fn allocation(&mut self, now: f64, job: u64) -> u64 {
        self.seek(now)
            .and_then(|e| {
                e.allocations
                    .binary_search_by_key(&job, |a| a.0)
                    .ok()
                    .map(|k| e.allocations[k].1)
            })
            .unwrap_or(0)
    }

    /// Next instant after `now` at which the guide's allocation changes.
    fn next_change(&mut self, now: f64) -> Option<f64> {
        match self.seek(now) {
            Some(e) => Some(e.end),
            None => self.epochs.get(self.cursor).map(|e| e.start),
        }
    }
}

/// Event-driven elastic scheduling of `jobs` over a shared GPU pool.
/// `curves` sets achievable throughput; `reference` sets each job's ideal
/// duration and so its deadline.
pub fn run_schedule(
    jobs: &[Job],
    curves: &CurveSet,
    reference: &CurveSet,
    config: ClusterConfig,
) -> Result<ScheduleResult> {
    simulate(jobs, curves, reference, config, None)
}

/// Runs `jobs` on `optimal` curves while holding every job to at least the
/// GPUs and admissions it had in `baseline`, a run on curves that `optimal`
/// dominates. GPUs idled by earlier completions are regranted greedily, so
/// no job finishes later than it did in `baseline`.
pub fn run_schedule_guided(
    jobs: &[Job],
    optimal: &CurveSet,
    reference: &CurveSet,
    baseline: &ScheduleResult,
) -> Result<ScheduleResult> {
    if baseline.jobs.len() != jobs.len()
        || baseline.jobs.iter().zip(jobs).any(|(o, j)| o.id != j.id)
    {
        return Err(Error::Config(
            "guide run covers a different job list".into(),
        ));
    }
    simulate(
        jobs,
        optimal,
        reference,
        baseline.config,
        Some(Guide::new(baseline)),
    )
}

/// Baseline run, then the optimal run guided by it.
pub fn compare_modes(
    jobs: &[Job],
    baseline: &CurveSet,
    optimal: &CurveSet,
    config: ClusterConfig,
) -> Result<(ScheduleResult, ScheduleResult)> {
    for (id, b) in baseline {
        let dominated = optimal.get(id).is_some_and(|o| {
            b.points
                .iter()
                .all(|(&g, p)| o.throughput_at(g) >= p.throughput)
        });
        if !dominated {
            return Err(Error::Config(format!(
                "{id}: optimal curve is slower than baseline somewhere"
            )));
        }
    }
    let base = run_schedule(jobs, baseline, optimal, config)?;
    let opt = run_schedule_guided(jobs, optimal, optimal, &base)?;
    Ok((base, opt))
}

fn simulate(
    jobs: &[Job],
    curves: &CurveSet,
    reference: &CurveSet,
    config: ClusterConfig,
    mut guide: Option<Guide>,
) -> Result<ScheduleResult> {
    let total = config.total_gpus;
    let mut live: Vec<Live> = Vec::with_capacity(jobs.len());
    for job in jobs {
        let curve = curves.get(&job.model_id).ok_or_else(|| {
            Error::Config(format!(
                "job {}: no throughput curve for {}",
                job.id, job.model_id
            ))
        })?;
        let ideal = reference
            .get(&job.model_id)
            .map(|c| c.throughput_at(total))
            .unwrap_or(0.0);
        if !(ideal > 0.0) || curve.min_gpus().is_none_or(|g| g > total) {
            return Err(Error::Config(format!(
                "{} cannot run within {total} GPUs",
                job.model_id
            )));
        }
        live.push(Live {
            job,
            curve,
            deadline: job.arrival + job.lambda * job.iterations as f64 / ideal,
            remaining: job.iterations as f64,
            gpus: 0,
            state: JobState::Pending,
            completion: None,
            work_done: 0.0,
        });
    }
    let mut order: Vec<usize> = (0..live.len()).collect();
    order.sort_by(|&a, &b| {
        jobs[a]
            .arrival
            .total_cmp(&jobs[b].arrival)
            .then(jobs[a].id.cmp(&jobs[b].id))
    });

    let mut epochs = Vec::new();
    let mut admitted: Vec<usize> = Vec::new();
    let mut next = 0;
    let mut now = order.first().map(|&i| jobs[i].arrival).unwrap_or(0.0);
    loop {
        let next_arrival = order.get(next).map(|&i| jobs[i].arrival);
        let finishing = admitted
            .iter()
            .filter(|&&i| live[i].gpus > 0)
            .map(|&i| (now + live[i].remaining / live[i].throughput(), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(jobs[a.1].id.cmp(&jobs[b.1].id)));
        let Some(t) = [next_arrival, finishing.map(|f| f.0)]
            .into_iter()
            .flatten()
            .reduce(f64::min)
        else {
            break;
        };
        let t = match guide.as_mut().and_then(|g| g.next_change(now)) {
            Some(change) if change > now && change < t && !admitted.is_empty() => change,
            _ => t,
        };

        if t > now {
            let mut allocations = Vec::new();
            for &i in &admitted {
                let l = &mut live[i];
                if l.gpus > 0 {
                    let done = l.throughput() * (t - now);
                    l.remaining -= done;
                    l.work_done += done;
                    allocations.push((l.job.id, l.gpus));
                }
            }
            allocations.sort_unstable();
            epochs.push(Epoch {
                start: now,
                end: t,
                allocations,
            });
        }
        now = t;

        for &i in &admitted {
            let l = &mut live[i];
            let due = finishing.is_some_and(|(f, j)| j == i && f <= t);
            if l.gpus > 0 && (due || l.remaining <= 1e-9 * l.job.iterations as f64) {
                l.remaining = 0.0;
                l.state = JobState::Completed;
                l.completion = Some(now);
                l.gpus = 0;
            }
        }
        admitted.retain(|&i| live[i].active());

        while let Some(&i) = order.get(next) {
            if jobs[i].arrival > now {
                break;
            }
            next += 1;
            let admit = match &guide {
                Some(g) => !g.terminated.contains(&jobs[i].id),
                None if config.deadline_mode => live[i].deadline_minimum(now).is_some_and(|own| {
                    let others: u64 = admitted.iter().map(|&k| live[k].floor(now, true)).sum();
                    others + own <= total
                }),
                None => true,
            };
            if admit {
                admitted.push(i);
            } else {
                live[i].state = JobState::Terminated;
            }
        }

        let floors: Vec<u64> = match guide.as_mut() {
            Some(g) => admitted
                .iter()
                .map(|&i| g.allocation(now, jobs[i].id))
                .collect(),
            None => admitted
                .iter()
                .map(|&i| live[i].floor(now, config.deadline_mode))
                .collect(),
        };
        allocate(&mut live, &admitted, &floors, total);
    }

    let outcomes: Vec<JobOutcome> = live
        .iter()
        .map(|l| {
            let met = l
                .completion
                .is_some_and(|c| c <= l.deadline + 1e-9 * l.deadline.abs().max(1.0));
            JobOutcome {
                id: l.job.id,
                model_id: l.job.model_id.clone(),
                state: l.state,
                arrival: l.job.arrival,
                deadline: l.deadline,
                completion: l.completion,
                jct: l.completion.map(|c| c - l.job.arrival),
                deadline_met: met,
                work_done: l.work_done,
            }
        })
        .collect();
    Ok(ScheduleResult {
        config,
        metrics: metrics(&outcomes),
        jobs: outcomes,
        epochs,
    })
}

/// Floors in arrival order while they fit, then surplus to the largest
/// throughput gain per GPU.
fn allocate(live: &mut [Live], admitted: &[usize], floors: &[u64], total: u64) {
    let mut free = total;
    for (&i, &floor) in admitted.iter().zip(floors) {
        live[i].gpus = if floor <= free { floor } else { 0 };
        free -= live[i].gpus;
    }
    while free > 0 {
        let mut best: Option<(f64, u64, usize, u64)> = None;
        for &i in admitted {
            let l = &live[i];
            let current = l.throughput();
            for (&g, _) in l.curve.points.range(l.gpus + 1..=l.gpus + free) {
                let gain = (l.curve.throughput_at(g) - current) / (g - l.gpus) as f64;
                if gain <= 0.0 {
                    continue;
                }
                if best.is_none_or(|(bg, bid, _, _)| gain > bg || (gain == bg && l.job.id < bid)) {
                    best = Some((gain, l.job.id, i, g));
                }
            }
        }
        let Some((_, _, i, g)) = best else { break };
        free -= g - live[i].gpus;
        live[i].gpus = g;
    }
    for &i in admitted {
        live[i].state = if live[i].gpus > 0 {
            JobState::Running
        } else {
            JobState::Pending
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::catalog::{CurveMode, CurvePoint};
    use crate::model::ParallelPlan;
    use std::collections::BTreeMap;

    /// Linear speedup in steps of `step` GPUs up to `max`.
    fn linear(id: &str, step: u64, max: u64, per_gpu: f64) -> ThroughputCurve {
        let points: BTreeMap<u64, CurvePoint> = (1..=max / step)
            .map(|k| {
                let g = k * step;
                (
                    g,
                    CurvePoint {
                        throughput: per_gpu * g as f64,
                        plan: ParallelPlan::new(1, g as u32, 1, g),
                    },
                )
            })
            .collect();
        ThroughputCurve {
            model_id: id.into(),
            mode: CurveMode::Optimal,
            points,
        }
    }

    fn set(curves: Vec<ThroughputCurve>) -> CurveSet {
        curves
            .into_iter()
            .map(|c| (c.model_id.clone(), c))
            .collect()
    }

    fn job(id: u64, arrival: f64, iterations: u64, lambda: f64) -> Job {
        Job {
            id,
            arrival,
            model_id: "m".into(),
            iterations,
            lambda,
        }
    }

    #[test]
    fn metric_examples() {
        let mk = |arrival: f64, completion: f64, met: bool| JobOutcome {
            id: 0,
            model_id: "m".into(),
            state: JobState::Completed,
            arrival,
            deadline: 0.0,
            completion: Some(completion),
            jct: Some(completion - arrival),
            deadline_met: met,
            work_done: 0.0,
        };
        let m = metrics(&[mk(0.0, 5.0, true), mk(0.0, 9.0, true), mk(0.0, 7.0, false)]);
        assert_eq!(m.makespan, 9.0);
        let m = metrics(&[
            mk(0.0, 5.0, true),
            mk(0.0, 9.0, true),
            mk(0.0, 7.0, true),
            mk(0.0, 7.0, false),
        ]);
        assert_eq!(m.deadline_ratio, 0.75);
        assert_eq!(metrics(&[mk(2.0, 10.0, true)]).avg_jct, 8.0);
        assert_eq!(metrics(&[]), Metrics::default());
    }

    #[test]
    fn lone_job_takes_largest_point() {
        let curves = set(vec![linear("m", 16, 1000, 0.01)]);
        let r = run_schedule(
            &[job(0, 2.0, 1000, 1.0)],
            &curves,
            &curves,
            ClusterConfig::default(),
        )
        .unwrap();
        // Largest point <= 1024 is 992 GPUs.
        let expect = 1000.0 / (0.01 * 992.0);
        let j = &r.jobs[0];
        assert!((j.jct.unwrap() - expect).abs() < 1e-9 * expect);
        assert!(j.deadline_met);
        assert!((j.deadline - (2.0 + expect)).abs() < 1e-9);
        assert_eq!(r.epochs[0].allocations, vec![(0, 992)]);
    }

    #[test]
    fn deadline_scales_with_lambda() {
        // 10 hours at full cluster.
        let curves = set(vec![linear("m", 1024, 1024, 1.0 / (36_000.0 * 1024.0))]);
        let r = run_schedule(
            &[job(0, 100.0, 1, 1.5)],
            &curves,
            &curves,
            ClusterConfig::default(),
        )
        .unwrap();
        assert!((r.jobs[0].deadline - (100.0 + 15.0 * 3600.0)).abs() < 1e-6);
    }

    #[test]
    fn admission_rejects_overcommit() {
        let curves = set(vec![linear("m", 64, 1024, 0.001)]);
        // Each needs 640 of 1024 GPUs to make a deadline at lambda 1.6 relative to full speed.
        let jobs = [job(0, 0.0, 1000, 1.5), job(1, 0.0, 1000, 1.5)];
        let on = run_schedule(&jobs, &curves, &curves, ClusterConfig::default()).unwrap();
        assert_eq!(on.jobs[0].state, JobState::Completed);
        assert_eq!(on.jobs[1].state, JobState::Terminated);
        assert!(on.jobs[0].deadline_met && !on.jobs[1].deadline_met);
        let off = run_schedule(
            &jobs,
            &curves,
            &curves,
            ClusterConfig {
                deadline_mode: false,
                ..ClusterConfig::default()
            },
        )
        .unwrap();
        assert!(off.jobs.iter().all(|j| j.state == JobState::Completed));
    }

    /// Same GPU counts, faster at every point, plus odd sizes in between.
    fn faster(c: &ThroughputCurve, extra: &[u64]) -> ThroughputCurve {
        let mut out = c.clone();
        for p in out.points.values_mut() {
            p.throughput *= 1.05;
        }
        for &g in extra {
            let thr = c.throughput_at(g) * 1.02;
            out.points.entry(g).or_insert(CurvePoint {
                throughput: thr,
                plan: ParallelPlan::new(1, g as u32, 1, g),
            });
        }
        out
    }

    fn mixed_jobs(n: u64) -> Vec<Job> {
        (0..n)
            .map(|i| Job {
                id: i,
                arrival: (i * 7 % 5) as f64 * 900.0 + i as f64 * 60.0,
                model_id: if i % 2 == 0 { "m".into() } else { "n".into() },
                iterations: 100 + i * 37 % 300,
                lambda: 0.5 + (i % 6) as f64 * 0.2,
            })
            .collect()
    }

    #[test]
    fn guided_run_never_finishes_later() {
        let base = set(vec![
            linear("m", 64, 1024, 0.001),
            linear("n", 128, 1024, 0.0004),
        ]);
        let opt = set(vec![
            faster(&base["m"], &[96, 200, 700]),
            faster(&base["n"], &[48, 320]),
        ]);
        for deadline_mode in [true, false] {
            let config = ClusterConfig {
                total_gpus: 1024,
                deadline_mode,
            };
            let (b, o) = compare_modes(&mixed_jobs(30), &base, &opt, config).unwrap();
            for (x, y) in b.jobs.iter().zip(&o.jobs) {
                assert_eq!(x.deadline, y.deadline);
                assert_eq!(
                    x.state == JobState::Terminated,
                    y.state == JobState::Terminated
                );
                if let Some(c) = x.completion {
                    assert!(y.completion.unwrap() <= c + 1e-9 * c, "job {}", x.id);
                }
                assert!(!x.deadline_met || y.deadline_met);
            }
            for e in &o.epochs {
                assert!(e.allocations.iter().map(|a| a.1).sum::<u64>() <= 1024);
            }
            assert!(o.metrics.deadline_ratio >= b.metrics.deadline_ratio);
            assert!(o.metrics.makespan <= b.metrics.makespan);
            assert!(o.metrics.avg_jct < b.metrics.avg_jct);
        }
        // Curves that do not dominate are refused.
        assert!(compare_modes(&mixed_jobs(3), &opt, &base, ClusterConfig::default()).is_err());
    }

    #[test]
    fn unknown_model_is_an_error() {
        let curves = set(vec![linear("other", 8, 64, 1.0)]);
        assert!(run_schedule(
            &[job(0, 0.0, 1, 1.0)],
            &curves,
            &curves,
            ClusterConfig::default()
        )
        .is_err());
    }

    #[test]
    fn empty_trace() {
        let curves = set(vec![linear("m", 8, 64, 1.0)]);
        let r = run_schedule(&[], &curves, &curves, ClusterConfig::default()).unwrap();
        assert_eq!(r.metrics.makespan, 0.0);
        assert_eq!(r.metrics.jobs, 0);
    }

    #[test]
    fn conservation_and_progress() {
        let curves = set(vec![linear("m", 32, 1024, 0.002), {
            let mut c = linear("n", 96, 960, 0.0015);
            c.model_id = "n".into();
            c
        }]);
        let jobs: Vec<Job> = (0..40)
            .map(|i| Job {
                id: i,
                arrival: (i * 37 % 11) as f64 * 300.0 + i as f64,
                model_id: if i % 3 == 0 { "n".into() } else { "m".into() },
                iterations: 200 + (i * 53 % 400),
                lambda: 0.5 + (i % 11) as f64 / 10.0,
            })
            .collect();
        for deadline_mode in [true, false] {
            let r = run_schedule(
                &jobs,
                &curves,
                &curves,
                ClusterConfig {
                    total_gpus: 1024,
                    deadline_mode,
                },
            )
            .unwrap();
            for e in &r.epochs {
                assert!(e.allocations.iter().map(|a| a.1).sum::<u64>() <= 1024);
                assert!(e.end > e.start);
            }
            for j in r.jobs.iter().filter(|j| j.state == JobState::Completed) {
                let it = jobs.iter().find(|x| x.id == j.id).unwrap().iterations as f64;
                assert!(
                    (j.work_done - it).abs() <= 1e-9 * it,
                    "job {}: {} vs {it}",
                    j.id,
                    j.work_done
                );
            }
            if !deadline_mode {
                assert_eq!(r.metrics.completed, 40);
            }
        }
    }
}
