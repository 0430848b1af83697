use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Compute,
    Comm,
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stream::Compute => f.write_str("compute"),
            Stream::Comm => f.write_str("comm"),
        }
    }
}

pub const NO_ORIGIN: u32 = u32::MAX;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskNode {
    pub device: u32,
    pub stream: Stream,
    /// Seconds.
    pub duration: f64,
    /// Index into [`TaskGraph::label`].
    pub label: u32,
    /// Operator this task was lowered from, or [`NO_ORIGIN`].
    pub origin: u32,
}

/// Immutable task-granularity graph.
///
/// Each `(device, stream)` pair executes its tasks in a fixed issue order;
/// a task's stream predecessor counts as one of its dependencies.
#[derive(Debug, Clone)]
pub struct TaskGraph {
    tasks: Vec<TaskNode>,
    child_offsets: Vec<u32>,
    children: Vec<u32>,
    indegree: Vec<u32>,
    streams: Vec<(u32, Stream)>,
    stream_of: Vec<u32>,
    stream_next: Vec<u32>,
    stream_prev: Vec<u32>,
    labels: Vec<String>,
    num_edges: usize,
}

impl TaskGraph {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    pub fn task(&self, id: u32) -> &TaskNode {
        &self.tasks[id as usize]
    }

    pub fn tasks(&self) -> &[TaskNode] {
        &self.tasks
    }

    pub fn children(&self, id: u32) -> &[u32] {
        let (a, b) = (
            self.child_offsets[id as usize],
            self.child_offsets[id as usize + 1],
        );
        &self.children[a as usize..b as usize]
    }

    /// Data-dependency in-degree.
    pub fn indegree(&self, id: u32) -> u32 {
        self.indegree[id as usize]
    }

    /// Unmet dependencies at the start of a run: data parents plus the stream
    /// predecessor.
    pub fn initial_ref(&self, id: u32) -> u32 {
        self.indegree[id as usize] + u32::from(self.stream_prev[id as usize] != NONE)
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[self.tasks[id as usize].label as usize]
    }

    /// `(device, stream)` pairs in sorted order.
    pub fn streams(&self) -> &[(u32, Stream)] {
        &self.streams
    }

    pub fn stream_index(&self, id: u32) -> usize {
        self.stream_of[id as usize] as usize
    }

    pub fn stream_next(&self, id: u32) -> Option<u32> {
        Some(self.stream_next[id as usize]).filter(|&n| n != NONE)
    }

    pub fn stream_prev(&self, id: u32) -> Option<u32> {
        Some(self.stream_prev[id as usize]).filter(|&n| n != NONE)
    }

    /// Tasks of one stream in issue order.
    pub fn stream_order(&self, stream: usize) -> Vec<u32> {
        let mut first = None;
        for (id, &s) in self.stream_of.iter().enumerate() {
            if s as usize == stream && self.stream_prev[id] == NONE {
                first = Some(id as u32);
                break;
            }
        }
        let mut order = Vec::new();
        let mut cur = first;
        while let Some(id) = cur {
            order.push(id);
            cur = self.stream_next(id);
        }
        order
    }

    pub fn devices(&self) -> Vec<u32> {
        let mut devices: Vec<u32> = self.streams.iter().map(|s| s.0).collect();
        devices.dedup();
        devices
    }
}

#[derive(Debug, Default)]
pub struct TaskGraphBuilder {
    tasks: Vec<TaskNode>,
    edges: Vec<(u32, u32)>,
    labels: Vec<String>,
    label_ids: HashMap<String, u32>,
}

impl TaskGraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(tasks: usize, edges: usize) -> Self {
        TaskGraphBuilder {
            tasks: Vec::with_capacity(tasks),
            edges: Vec::with_capacity(edges),
            ..Self::default()
        }
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.label_ids.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_string());
        self.label_ids.insert(label.to_string(), id);
        id
    }

    pub fn add_task(&mut self, device: u32, stream: Stream, duration: f64, label: &str) -> u32 {
        let label = self.intern(label);
        self.push(TaskNode {
            device,
            stream,
            duration,
            label,
            origin: NO_ORIGIN,
        })
    }

    pub fn push(&mut self, task: TaskNode) -> u32 {
        let id = self.tasks.len() as u32;
        self.tasks.push(task);
        id
    }

    pub fn add_edge(&mut self, from: u32, to: u32) {
        self.edges.push((from, to));
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Streams issue their tasks in ascending id order.
    pub fn build(self) -> Result<TaskGraph> {
        self.build_with_order(|a, b| a.cmp(b))
    }

    /// Streams issue their tasks in the order given by `cmp` over task ids.
    pub fn build_with_order(
        self,
        mut cmp: impl FnMut(&u32, &u32) -> Ordering,
    ) -> Result<TaskGraph> {
        let n = self.tasks.len();
        if n >= NONE as usize {
            return Err(Error::Config(format!(
                "{n} tasks exceed the graph capacity"
            )));
        }
        for (id, task) in self.tasks.iter().enumerate() {
            if !(task.duration.is_finite() && task.duration >= 0.0) {
                return Err(Error::Config(format!(
                    "task {id} has invalid duration {}",
                    task.duration
                )));
            }
        }
        let mut child_offsets = vec![0u32; n + 1];
        let mut indegree = vec![0u32; n];
        for &(from, to) in &self.edges {
            if from as usize >= n || to as usize >= n {
                return Err(Error::Config(format!(
                    "edge ({from}, {to}) references a missing task"
                )));
            }
            child_offsets[from as usize + 1] += 1;
            indegree[to as usize] += 1;
        }
        for i in 0..n {
            child_offsets[i + 1] += child_offsets[i];
        }
        let mut fill = child_offsets.clone();
        let mut children = vec![0u32; self.edges.len()];
        for &(from, to) in &self.edges {
            children[fill[from as usize] as usize] = to;
            fill[from as usize] += 1;
        }
        for i in 0..n {
            children[child_offsets[i] as usize..child_offsets[i + 1] as usize].sort_unstable();
        }

        let mut streams: Vec<(u32, Stream)> =
            self.tasks.iter().map(|t| (t.device, t.stream)).collect();
        streams.sort_unstable();
        streams.dedup();
        let index: HashMap<(u32, Stream), u32> = streams
            .iter()
            .enumerate()
            .map(|(i, &s)| (s, i as u32))
            .collect();
        let stream_of: Vec<u32> = self
            .tasks
            .iter()
            .map(|t| index[&(t.device, t.stream)])
            .collect();
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); streams.len()];
        for id in 0..n as u32 {
            members[stream_of[id as usize] as usize].push(id);
        }
        let mut stream_next = vec![NONE; n];
        let mut stream_prev = vec![NONE; n];
        for list in &mut members {
            list.sort_by(&mut cmp);
            for pair in list.windows(2) {
                stream_next[pair[0] as usize] = pair[1];
                stream_prev[pair[1] as usize] = pair[0];
            }
        }
        Ok(TaskGraph {
            tasks: self.tasks,
            child_offsets,
            children,
            indegree,
            streams,
            stream_of,
            stream_next,
            stream_prev,
            labels: self.labels,
            num_edges: self.edges.len(),
        })
    }
}
