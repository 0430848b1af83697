use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CollectiveKind, CollectiveRow, KernelEntry, OperatorSignature};
use crate::error::{Error, Result};

/// Contents of one profile file, durations kept in microseconds exactly as
/// written so that load/save is lossless.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileTables {
    #[serde(default)]
    pub ops: Vec<ProfiledOp>,
    #[serde(default)]
    pub collectives: Vec<ProfiledCollective>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfiledOp {
    pub sig: OperatorSignature,
    pub kernels: Vec<ProfiledKernel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfiledKernel {
    pub name: String,
    pub us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfiledCollective {
    pub kind: CollectiveKind,
    pub n: u32,
    pub bytes: u64,
    pub us: f64,
}

impl ProfiledOp {
    pub fn kernel_entries(&self) -> Vec<KernelEntry> {
        self.kernels
            .iter()
            .map(|k| KernelEntry::new(k.name.clone(), k.us / 1e6))
            .collect()
    }
}

impl ProfiledCollective {
    pub fn row(&self) -> CollectiveRow {
        CollectiveRow {
            kind: self.kind,
            group: self.n,
            bytes: self.bytes,
            latency: self.us / 1e6,
        }
    }
}

impl ProfileTables {
    /// Lists every offending row; empty when the tables are usable.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        for (i, op) in self.ops.iter().enumerate() {
            if !seen.insert(op.sig) {
                problems.push(format!("ops[{i}]: duplicate signature {}", op.sig));
            }
            if op.kernels.is_empty() {
                problems.push(format!("ops[{i}]: {} has no kernels", op.sig));
            }
            for (j, k) in op.kernels.iter().enumerate() {
                if !(k.us.is_finite() && k.us >= 0.0) {
                    problems.push(format!(
                        "ops[{i}].kernels[{j}] ({}): invalid duration {}",
                        k.name, k.us
                    ));
                }
            }
        }
        let mut series: BTreeMap<(CollectiveKind, u32), Vec<(u64, f64, usize)>> = BTreeMap::new();
        for (i, c) in self.collectives.iter().enumerate() {
            if !(c.us.is_finite() && c.us >= 0.0) {
                problems.push(format!("collectives[{i}]: invalid duration {}", c.us));
            }
            if c.n == 0 {
                problems.push(format!("collectives[{i}]: group size must be >= 1"));
            }
            series
                .entry((c.kind, c.n))
                .or_default()
                .push((c.bytes, c.us, i));
        }
        for ((kind, n), mut rows) in series {
            rows.sort_by_key(|&(bytes, _, i)| (bytes, i));
            for pair in rows.windows(2) {
                let (b0, us0, i0) = pair[0];
                let (b1, us1, i1) = pair[1];
                if b0 == b1 {
                    problems.push(format!(
                        "collectives[{i1}]: duplicate {kind} n={n} bytes={b1} (also row {i0})"
                    ));
                } else if us1 < us0 {
                    problems.push(format!(
                        "collectives[{i1}]: {kind} n={n} latency {us1}us at {b1} bytes is below {us0}us at {b0} bytes (row {i0})"
                    ));
                }
            }
        }
        problems
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::ProfileInvalid(problems))
        }
    }

    /// Sorted, the form `save_profile` writes.
    pub fn canonicalize(&mut self) {
        self.ops.sort_by_key(|a| a.sig);
        self.collectives.sort_by_key(|a| (a.kind, a.n, a.bytes));
    }

    /// Appends another fragment; the merged tables are revalidated.
    pub fn merge(&mut self, other: ProfileTables) -> Result<()> {
        self.ops.extend(other.ops);
        self.collectives.extend(other.collectives);
        self.validate()
    }
}

pub fn parse_profile(text: &str, origin: &Path) -> Result<ProfileTables> {
    let tables: ProfileTables = serde_json::from_str(text).map_err(|e| Error::ProfileParse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    tables.validate()?;
    Ok(tables)
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<ProfileTables> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::ProfileParse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_profile(&text, path)
}

/// Canonical JSON text (sorted rows, pretty-printed, trailing newline).
pub fn save_profile(tables: &ProfileTables) -> String {
    let mut canonical = tables.clone();
    canonical.canonicalize();
    let mut text = serde_json::to_string_pretty(&canonical).expect("profile tables serialize");
    text.push('\n');
    text
}
