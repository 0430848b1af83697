//! Discrete-event execution of task graphs and the derived end-to-end
//! metrics.

mod analysis;
mod sim;
mod taskgraph;

use std::io::Write;

pub use analysis::{exposed_dp_comm, peak_in_flight_forwards};
pub use sim::{
    brute_force_makespan, end_to_end, simulate_iteration, simulate_iteration_time, DeviceBusy,
    SimResult, Span, ORACLE_MAX_TASKS,
};
pub use taskgraph::{Stream, TaskGraph, TaskGraphBuilder, TaskNode, NO_ORIGIN};

use crate::error::{Error, Result};

/// Writes `device,stream,task_label,start_us,end_us` rows in task-id order.
pub fn write_timeline_csv<W: Write>(tg: &TaskGraph, timeline: &[Span], out: W) -> Result<()> {
    if timeline.len() != tg.len() {
        return Err(Error::Config(format!(
            "timeline has {} entries for {} tasks",
            timeline.len(),
            tg.len()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["device", "stream", "task_label", "start_us", "end_us"])?;
    for (id, span) in timeline.iter().enumerate() {
        let task = tg.task(id as u32);
        w.write_record([
            task.device.to_string(),
            task.stream.to_string(),
            tg.label(id as u32).to_string(),
            format!("{:.3}", span.start * 1e6),
            format!("{:.3}", span.end * 1e6),
        ])?;
    }
    w.flush()?;
    Ok(())
}
