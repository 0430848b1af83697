use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAMBDA_RANGE: (f64, f64) = (0.5, 1.5);

/// A training job as submitted to the cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub arrival: f64,
    pub model_id: String,
    pub iterations: u64,
    /// Deadline factor over the ideal duration.
    pub lambda: f64,
}

#[derive(Deserialize)]
struct Row {
    job_id: u64,
    arrival_s: f64,
    model_id: String,
    iterations: u64,
    lambda: f64,
}

pub fn load_trace(path: &Path) -> Result<Vec<Job>> {
    let file = std::fs::File::open(path)?;
    read_trace(file).map_err(|e| match e {
        Error::Trace { line, message } => Error::Trace {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Parses `job_id,arrival_s,model_id,iterations,lambda` rows, sorted by arrival.
pub fn read_trace<R: Read>(input: R) -> Result<Vec<Job>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let mut jobs = Vec::new();
    for (i, record) in reader.deserialize::<Row>().enumerate() {
        // Header is line 1.
        let line = i + 2;
        let bad = |message: String| Error::Trace { line, message };
        let row = record.map_err(|e| {
            let field = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => {
                    err.field().and_then(|f| headers.get(f as usize))
                }
                _ => None,
            };
            match field {
                Some(name) => bad(format!("{name}: {e}")),
                None => bad(e.to_string()),
            }
        })?;
        if !(row.arrival_s.is_finite() && row.arrival_s >= 0.0) {
            return Err(bad(format!(
                "arrival_s {} must be a non-negative number",
                row.arrival_s
            )));
        }
        if row.iterations == 0 {
            return Err(bad("iterations must be >= 1".into()));
        }
        if !(LAMBDA_RANGE.0..=LAMBDA_RANGE.1).contains(&row.lambda) {
            return Err(bad(format!(
                "lambda {} outside [{}, {}]",
                row.lambda, LAMBDA_RANGE.0, LAMBDA_RANGE.1
            )));
        }
        if jobs.iter().any(|j: &Job| j.id == row.job_id) {
            return Err(bad(format!("duplicate job_id {}", row.job_id)));
        }
        jobs.push(Job {
            id: row.job_id,
            arrival: row.arrival_s,
            model_id: row.model_id,
            iterations: row.iterations,
            lambda: row.lambda,
        });
    }
    jobs.sort_by(|a, b| a.arrival.total_cmp(&b.arrival).then(a.id.cmp(&b.id)));
    Ok(jobs)
}

pub fn write_trace<W: Write>(jobs: &[Job], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["job_id", "arrival_s", "model_id", "iterations", "lambda"])?;
    for j in jobs {
        w.write_record([
            j.id.to_string(),
            format!("{}", j.arrival),
            j.model_id.clone(),
            j.iterations.to_string(),
            format!("{}", j.lambda),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Poisson arrivals with uniformly drawn models, lengths and deadline factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceParams {
    pub jobs: usize,
    pub mean_interarrival_s: f64,
    pub min_iterations: u64,
    pub max_iterations: u64,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams {
            jobs: 64,
            mean_interarrival_s: 3600.0,
            min_iterations: 200,
            max_iterations: 2000,
        }
    }
}

pub fn synthetic_trace(seed: u64, params: &TraceParams, model_ids: &[String]) -> Result<Vec<Job>> {
    if model_ids.is_empty() && params.jobs > 0 {
        return Err(Error::Config(
            "synthetic trace needs at least one model".into(),
        ));
    }
    if params.min_iterations == 0 || params.min_iterations > params.max_iterations {
        return Err(Error::Config(
            "iteration range must satisfy 1 <= min <= max".into(),
        ));
    }
    if !(params.mean_interarrival_s >= 0.0) {
        return Err(Error::Config(
            "mean inter-arrival time must be non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clock = 0.0;
    let mut jobs = Vec::with_capacity(params.jobs);
    for id in 0..params.jobs as u64 {
        if id > 0 {
            let u: f64 = rng.gen();
            clock += -(1.0 - u).ln() * params.mean_interarrival_s;
        }
        jobs.push(Job {
            id,
            arrival: clock,
            model_id: model_ids[rng.gen_range(0..model_ids.len())].clone(),
            iterations: rng.gen_range(params.min_iterations..=params.max_iterations),
            lambda: rng.gen_range(LAMBDA_RANGE.0..=LAMBDA_RANGE.1),
        });
    }
    Ok(jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows_in_arrival_order() {
        let text = "job_id,arrival_s,model_id,iterations,lambda\n2,50,a,10,1.0\n0,0,b,20,0.5\n1,10.5,a,5,1.5\n";
        let jobs = read_trace(text.as_bytes()).unwrap();
        assert_eq!(jobs.iter().map(|j| j.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        let mut buf = Vec::new();
        write_trace(&jobs, &mut buf).unwrap();
        assert_eq!(read_trace(&buf[..]).unwrap(), jobs);
    }

    #[test]
    fn bad_rows_name_their_line() {
        let cases = [
            (
                "job_id,arrival_s,model_id,iterations,lambda\n0,0,a,10,1.0\n1,x,a,10,1.0\n",
                3,
                "arrival_s",
            ),
            (
                "job_id,arrival_s,model_id,iterations,lambda\n0,0,a,10,2.0\n",
                2,
                "lambda",
            ),
            (
                "job_id,arrival_s,model_id,iterations,lambda\n0,0,a,0,1.0\n",
                2,
                "iterations",
            ),
            (
                "job_id,arrival_s,model_id,iterations,lambda\n0,0,a,1,1.0\n0,1,a,1,1.0\n",
                3,
                "duplicate",
            ),
        ];
        for (text, want_line, needle) in cases {
            match read_trace(text.as_bytes()) {
                Err(Error::Trace { line, message }) => {
                    assert_eq!(line, want_line, "{message}");
                    assert!(message.contains(needle), "{message}");
                }
                other => panic!("expected trace error, got {other:?}"),
            }
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let p = TraceParams {
            jobs: 32,
            ..TraceParams::default()
        };
        let a = synthetic_trace(7, &p, &ids).unwrap();
        assert_eq!(a, synthetic_trace(7, &p, &ids).unwrap());
        assert_ne!(a, synthetic_trace(8, &p, &ids).unwrap());
        assert!(a.windows(2).all(|w| w[0].arrival <= w[1].arrival));
        assert!(a
            .iter()
            .all(|j| (0.5..=1.5).contains(&j.lambda) && (200..=2000).contains(&j.iterations)));
        assert!(synthetic_trace(1, &TraceParams { jobs: 0, ..p }, &[])
            .unwrap()
            .is_empty());
    }
}
