//! Operator-to-kernel lookup and communication latency models.
//!
//! Computation operators resolve through a profile table keyed by
//! [`OperatorSignature`], falling back to an analytical roofline estimate when
//! enabled. Collectives use a profiled intra-node table where one exists and
//! the ring all-reduce latency-bandwidth model across nodes.

mod collective;
mod profile;
mod synth;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

pub use collective::{
    allreduce_time, p2p_time, CollectiveKind, CollectiveRow, CollectiveTable, CommScope,
    Interpolated,
};
pub use profile::{
    load_profile, parse_profile, save_profile, ProfileTables, ProfiledCollective, ProfiledKernel,
    ProfiledOp,
};
pub use synth::synthetic_profile;

use crate::error::{Error, Result};
use crate::model::{HardwareSpec, ModelConfig, ParallelPlan};
use crate::opgraph::OpKind;

/// Canonical key of a computation operator: per-GPU shard shapes after the
/// tensor-parallel split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OperatorSignature {
    pub kind: OpKind,
    /// Hidden size held by one tensor-parallel rank (`h / t`).
    pub h: u32,
    pub s: u32,
    /// Attention heads held by one rank (`n / t`).
    pub n: u32,
    pub b: u64,
    pub layers: u32,
    #[serde(default = "one")]
    pub t: u32,
    /// Vocabulary size; only meaningful for the LM head.
    #[serde(default)]
    pub v: u32,
}

fn one() -> u32 {
    1
}

impl OperatorSignature {
    pub fn new(kind: OpKind, model: &ModelConfig, plan: &ParallelPlan, layers: u32) -> Self {
        let t = plan.tensor.max(1);
        let uses_vocab = matches!(kind, OpKind::FwdLmHead | OpKind::BwdLmHead);
        OperatorSignature {
            kind,
            h: model.hidden_size / t,
            s: model.seq_len,
            n: model.num_heads / t,
            b: plan.micro_batch,
            layers,
            t,
            v: if uses_vocab { model.vocab_size } else { 0 },
        }
    }

    pub fn full_hidden(&self) -> f64 {
        self.h as f64 * self.t as f64
    }
}

impl fmt::Display for OperatorSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}(h={}, s={}, n={}, b={}, layers={}, t={}",
            self.kind, self.h, self.s, self.n, self.b, self.layers, self.t
        )?;
        if self.v > 0 {
            write!(f, ", v={}", self.v)?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEntry {
    pub name: String,
    /// Seconds.
    pub duration: f64,
}

impl KernelEntry {
    pub fn new(name: impl Into<String>, duration: f64) -> Self {
        KernelEntry {
            name: name.into(),
            duration,
        }
    }
}

/// How the analytical fallback apportions FLOPs to operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopsConvention {
    /// Per-operator shapes, including the `4 b s^2 h` attention-score term.
    #[default]
    ShapeFaithful,
    /// Splits exactly `6 N` FLOPs per token over the operators (no attention
    /// scores; the LM head carries the full `(V + s) h` embedding weights).
    SixN,
}

/// Forward/backward FLOPs of one computation operator shard.
pub fn op_flops(sig: &OperatorSignature, convention: FlopsConvention) -> Result<f64> {
    let b = sig.b as f64;
    let s = sig.s as f64;
    let h = sig.full_hidden();
    let t = sig.t.max(1) as f64;
    let layers = sig.layers as f64;
    let mha = || match convention {
        FlopsConvention::ShapeFaithful => (8.0 * b * s * h * h + 4.0 * b * s * s * h) / t,
        FlopsConvention::SixN => 8.0 * b * s * h * h / t,
    };
    let ffn = || 16.0 * b * s * h * h / t;
    let lm_head = || match convention {
        FlopsConvention::ShapeFaithful => 2.0 * b * s * h * sig.v as f64 / t,
        FlopsConvention::SixN => 2.0 * b * s * h * (sig.v as f64 + s) / t,
    };
    let flops = match sig.kind {
        OpKind::FwdMha => layers * mha(),
        OpKind::BwdMha => 2.0 * layers * mha(),
        OpKind::FwdFfn => layers * ffn(),
        OpKind::BwdFfn => 2.0 * layers * ffn(),
        OpKind::FwdLmHead => lm_head(),
        OpKind::BwdLmHead => 2.0 * lm_head(),
        OpKind::FwdEmbedding | OpKind::BwdEmbedding | OpKind::WeightUpdate => 0.0,
        kind @ (OpKind::AllReduceTp | OpKind::AllReduceDp | OpKind::SendRecvPp) => {
            return Err(Error::NotComputation {
                kind: format!("{kind:?}"),
            })
        }
    };
    Ok(flops)
}

/// A collective request handed to [`CostModel::comm_time`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CommRequest {
    pub kind: CollectiveKind,
    pub bytes: u64,
    pub group: u32,
    pub scope: CommScope,
    /// Concurrent transfers sharing the node's NICs (point-to-point only).
    pub nic_sharing: u32,
}

/// Source of operator and collective durations.
pub trait CostModel: Sync {
    fn resolve(&self, sig: &OperatorSignature) -> Result<Vec<KernelEntry>>;
    fn comm_time(&self, req: &CommRequest) -> Result<f64>;
    fn hardware(&self) -> &HardwareSpec;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostOptions {
    pub fallback: bool,
    /// Achievable fraction of peak FLOP/s for fallback kernels.
    pub efficiency: f64,
    pub flops: FlopsConvention,
    /// Duration of zero-FLOP operators without a profile entry.
    pub weight_update_seconds: f64,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            fallback: true,
            efficiency: 0.5,
            flops: FlopsConvention::ShapeFaithful,
            weight_update_seconds: 0.0,
        }
    }
}

#[derive(Debug)]
pub struct CostDatabase {
    ops: HashMap<OperatorSignature, Vec<KernelEntry>>,
    intra: CollectiveTable,
    hw: HardwareSpec,
    options: CostOptions,
    warned_extrapolation: AtomicBool,
}

impl CostDatabase {
    pub fn new(tables: ProfileTables, hw: HardwareSpec, options: CostOptions) -> Result<Self> {
        hw.validate()?;
        if !(options.efficiency > 0.0 && options.efficiency <= 1.0) {
            return Err(Error::Config(format!(
                "fallback efficiency {} not in (0, 1]",
                options.efficiency
            )));
        }
        tables.validate()?;
        Ok(CostDatabase {
            ops: tables
                .ops
                .iter()
                .map(|op| (op.sig, op.kernel_entries()))
                .collect(),
            intra: CollectiveTable::from_rows(
                tables.collectives.iter().map(ProfiledCollective::row),
            ),
            hw,
            options,
            warned_extrapolation: AtomicBool::new(false),
        })
    }

    /// Database with no profiles: everything comes from the analytical models.
    pub fn analytical(hw: HardwareSpec, options: CostOptions) -> Result<Self> {
        Self::new(ProfileTables::default(), hw, options)
    }

    pub fn options(&self) -> &CostOptions {
        &self.options
    }

    pub fn collective_table(&self) -> &CollectiveTable {
        &self.intra
    }

    pub fn profiled_ops(&self) -> usize {
        self.ops.len()
    }

    fn fallback_kernel(&self, sig: &OperatorSignature) -> Result<KernelEntry> {
        let flops = op_flops(sig, self.options.flops)?;
        let name = format!("analytic::{:?}", sig.kind);
        if flops == 0.0 {
            let seconds = match sig.kind {
                OpKind::WeightUpdate => self.options.weight_update_seconds,
                _ => 0.0,
            };
            return Ok(KernelEntry::new(name, seconds));
        }
        Ok(KernelEntry::new(
            name,
            flops / (self.hw.peak_flops * self.options.efficiency),
        ))
    }

    fn intra_time(&self, req: &CommRequest) -> Result<f64> {
        if let Some(hit) = self.intra.interpolate(req.kind, req.group, req.bytes) {
            if hit.extrapolated && !self.warned_extrapolation.swap(true, Ordering::Relaxed) {
                log::warn!(
                    "{} payload of {} bytes (group {}) lies outside the profiled range; extrapolating",
                    req.kind,
                    req.bytes,
                    req.group
                );
            }
            return Ok(hit.seconds);
        }
        match (self.hw.intra_node_bw, req.kind) {
            (Some(bw), CollectiveKind::AllReduce) => Ok(allreduce_time(req.bytes, req.group, bw)),
            (Some(bw), CollectiveKind::SendRecv) => Ok(p2p_time(req.bytes, bw)),
            (None, kind) => Err(Error::MissingCollective {
                kind: kind.to_string(),
                group: req.group,
            }),
        }
    }
}

impl CostModel for CostDatabase {
    fn resolve(&self, sig: &OperatorSignature) -> Result<Vec<KernelEntry>> {
        if let Some(kernels) = self.ops.get(sig) {
            return Ok(kernels.clone());
        }
        if !self.options.fallback {
            return Err(Error::MissingProfile(*sig));
        }
        Ok(vec![self.fallback_kernel(sig)?])
    }

    fn comm_time(&self, req: &CommRequest) -> Result<f64> {
        if req.group <= 1 {
            return Ok(0.0);
        }
        match req.scope {
            CommScope::IntraNode => self.intra_time(req),
            CommScope::InterNode => {
                let bw = self.hw.effective_inter_node_bw();
                Ok(match req.kind {
                    CollectiveKind::AllReduce => allreduce_time(req.bytes, req.group, bw),
                    CollectiveKind::SendRecv => {
                        p2p_time(req.bytes, bw / req.nic_sharing.max(1) as f64)
                    }
                })
            }
        }
    }

    fn hardware(&self) -> &HardwareSpec {
        &self.hw
    }
}
