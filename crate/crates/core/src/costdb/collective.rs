use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectiveKind {
    AllReduce,
    SendRecv,
}

impl fmt::Display for CollectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CollectiveKind::AllReduce => f.write_str("allreduce"),
            CollectiveKind::SendRecv => f.write_str("sendrecv"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CommScope {
    IntraNode,
    InterNode,
}

/// One profiled collective latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectiveRow {
    pub kind: CollectiveKind,
    pub group: u32,
    pub bytes: u64,
    pub latency: f64,
}

/// Result of a table lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolated {
    pub seconds: f64,
    pub extrapolated: bool,
}

/// Profiled intra-node collective latencies, keyed by (kind, group size) and
/// interpolated piecewise-linearly in the payload size.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollectiveTable {
    series: BTreeMap<(CollectiveKind, u32), Vec<(u64, f64)>>,
}

impl CollectiveTable {
    /// Builds a table from rows that already passed validation (unique keys).
    pub fn from_rows(rows: impl IntoIterator<Item = CollectiveRow>) -> Self {
        let mut series: BTreeMap<(CollectiveKind, u32), Vec<(u64, f64)>> = BTreeMap::new();
        for row in rows {
            series
                .entry((row.kind, row.group))
                .or_default()
                .push((row.bytes, row.latency));
        }
        for knots in series.values_mut() {
            knots.sort_by_key(|&(bytes, _)| bytes);
        }
        CollectiveTable { series }
    }

    pub fn rows(&self) -> impl Iterator<Item = CollectiveRow> + '_ {
        self.series.iter().flat_map(|(&(kind, group), knots)| {
            knots.iter().map(move |&(bytes, latency)| CollectiveRow {
                kind,
                group,
                bytes,
                latency,
            })
        })
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn covers(&self, kind: CollectiveKind, group: u32) -> bool {
        self.series.contains_key(&(kind, group))
    }

    /// `(min_bytes, max_bytes)` of the profiled domain for a series.
    pub fn bounds(&self, kind: CollectiveKind, group: u32) -> Option<(u64, u64)> {
        let knots = self.series.get(&(kind, group))?;
        Some((knots.first()?.0, knots.last()?.0))
    }

    /// Piecewise-linear latency at `bytes`; outside the profiled range the
    /// nearest segment is extended. A single-knot series scales linearly
    /// through the origin.
    pub fn interpolate(
        &self,
        kind: CollectiveKind,
        group: u32,
        bytes: u64,
    ) -> Option<Interpolated> {
        let knots = self.series.get(&(kind, group))?;
        let x = bytes as f64;
        if let [(b0, l0)] = knots.as_slice() {
            let seconds = if *b0 == 0 { *l0 } else { l0 * x / *b0 as f64 };
            return Some(Interpolated {
                seconds,
                extrapolated: bytes != *b0,
            });
        }
        let first = knots.first()?.0;
        let last = knots.last()?.0;
        let extrapolated = bytes < first || bytes > last;
        let seg = match knots.binary_search_by_key(&bytes, |&(b, _)| b) {
            Ok(i) => {
                return Some(Interpolated {
                    seconds: knots[i].1,
                    extrapolated: false,
                })
            }
            Err(0) => 0,
            Err(i) if i >= knots.len() => knots.len() - 2,
            Err(i) => i - 1,
        };
        let (x0, y0) = (knots[seg].0 as f64, knots[seg].1);
        let (x1, y1) = (knots[seg + 1].0 as f64, knots[seg + 1].1);
        let seconds = y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        Some(Interpolated {
            seconds: seconds.max(0.0),
            extrapolated,
        })
    }
}

/// Ring all-reduce latency-bandwidth model: `t = S/B * 2(n-1)/n` with `S` in
/// bytes and `B` in bits/s.
pub fn allreduce_time(bytes: u64, participants: u32, bandwidth_bits: f64) -> f64 {
    if participants <= 1 {
        return 0.0;
    }
    let n = participants as f64;
    8.0 * bytes as f64 / bandwidth_bits * (2.0 * (n - 1.0) / n)
}

/// Point-to-point transfer time over a link of `bandwidth_bits`.
pub fn p2p_time(bytes: u64, bandwidth_bits: f64) -> f64 {
    8.0 * bytes as f64 / bandwidth_bits
}
