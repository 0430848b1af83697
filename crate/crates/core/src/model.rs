//! Model, hardware and parallelization-plan types plus the closed-form
//! arithmetic (parameters, FLOPs, tokens, iterations, memory, cost) that the
//! rest of the crate builds on.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, PlanError, Result};

pub const DEFAULT_VOCAB: u32 = 51_200;

/// FLOPs per parameter per token for one training step (forward + backward).
pub const FLOPS_PER_PARAM_TOKEN: f64 = 6.0;
/// Same, with full activation recomputation (one extra forward pass).
pub const FLOPS_PER_PARAM_TOKEN_RECOMPUTE: f64 = 8.0;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

fn default_vocab() -> u32 {
    DEFAULT_VOCAB
}

/// Decoder-only transformer hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub hidden_size: u32,
    pub num_layers: u32,
    pub num_heads: u32,
    pub seq_len: u32,
    #[serde(default = "default_vocab")]
    pub vocab_size: u32,
}

impl ModelConfig {
    pub fn new(name: impl Into<String>, hidden: u32, layers: u32, heads: u32, seq: u32) -> Self {
        ModelConfig {
            name: name.into(),
            hidden_size: hidden,
            num_layers: layers,
            num_heads: heads,
            seq_len: seq,
            vocab_size: DEFAULT_VOCAB,
        }
    }

    pub fn with_vocab(mut self, vocab: u32) -> Self {
        self.vocab_size = vocab;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("seq_len", self.seq_len),
            ("vocab_size", self.vocab_size),
        ];
        for (field, value) in fields {
            if value == 0 {
                return Err(Error::InvalidModel(format!(
                    "{}: {field} must be >= 1",
                    self.name
                )));
            }
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidModel(format!(
                "{}: hidden_size {} is not a multiple of num_heads {}",
                self.name, self.hidden_size, self.num_heads
            )));
        }
        Ok(())
    }

    /// Weights of one decoder layer: 4h^2 for attention, 8h^2 for the MLP.
    pub fn layer_params(&self) -> u64 {
        let h = self.hidden_size as u64;
        12 * h * h
    }

    /// Token plus position embedding table.
    pub fn embedding_params(&self) -> u64 {
        (self.vocab_size as u64 + self.seq_len as u64) * self.hidden_size as u64
    }

    pub fn param_count(&self) -> u64 {
        param_count(self)
    }
}

/// `12 L h^2 + (V + s) h`.
pub fn param_count(model: &ModelConfig) -> u64 {
    model.num_layers as u64 * model.layer_params() + model.embedding_params()
}

/// `6 N tokens` FLOPs for one iteration.
pub fn flops_per_iteration(model: &ModelConfig, tokens_per_iter: u64) -> f64 {
    flops_per_iteration_with(model, tokens_per_iter, FLOPS_PER_PARAM_TOKEN)
}

pub fn flops_per_iteration_with(model: &ModelConfig, tokens_per_iter: u64, multiplier: f64) -> f64 {
    multiplier * param_count(model) as f64 * tokens_per_iter as f64
}

pub fn tokens_per_iteration(plan: &ParallelPlan, model: &ModelConfig) -> u64 {
    plan.global_batch * model.seq_len as u64
}

/// Smallest iteration count whose tokens cover `total_tokens`.
pub fn iterations_for_tokens(total_tokens: u64, tokens_per_iter: u64) -> u64 {
    total_tokens.div_ceil(tokens_per_iter)
}

/// Coarse per-GPU memory screen: mixed-precision Adam state (18 bytes per
/// parameter shard) plus stored activations of the in-flight micro-batches.
pub fn memory_per_gpu(model: &ModelConfig, plan: &ParallelPlan) -> u64 {
    let t = plan.tensor.max(1) as u128;
    let p = plan.pipeline.max(1) as u128;
    let weights = 18 * param_count(model) as u128 / (t * p);
    let activations = if plan.micro_batch == 0 {
        0
    } else {
        let layers_per_stage = (model.num_layers as u128).div_ceil(p);
        let in_flight = plan.in_flight_micro_batches() as u128;
        34 * model.seq_len as u128
            * plan.micro_batch as u128
            * model.hidden_size as u128
            * layers_per_stage
            * in_flight
            / t
    };
    u64::try_from(weights + activations).unwrap_or(u64::MAX)
}

pub fn dollar_cost(wall_seconds: f64, gpus: u64, dollars_per_gpu_hour: f64) -> f64 {
    wall_seconds / 3600.0 * gpus as f64 * dollars_per_gpu_hour
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Schedule {
    #[serde(rename = "gpipe", alias = "GPipe")]
    GPipe,
    #[serde(rename = "1f1b", alias = "OneFOneB")]
    OneFOneB,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Schedule::GPipe => f.write_str("gpipe"),
            Schedule::OneFOneB => f.write_str("1f1b"),
        }
    }
}

impl std::str::FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gpipe" => Ok(Schedule::GPipe),
            "1f1b" | "onefoneb" => Ok(Schedule::OneFOneB),
            other => Err(format!(
                "unknown schedule '{other}' (expected gpipe or 1f1b)"
            )),
        }
    }
}

fn default_buckets() -> u32 {
    1
}

fn default_micro_batch() -> u64 {
    1
}

fn default_schedule() -> Schedule {
    Schedule::OneFOneB
}

/// A `(t, d, p)`-way plan together with the batch split and pipeline schedule.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParallelPlan {
    #[serde(rename = "t")]
    pub tensor: u32,
    #[serde(rename = "d")]
    pub data: u32,
    #[serde(rename = "p")]
    pub pipeline: u32,
    /// Sequences per iteration, across all data-parallel replicas.
    pub global_batch: u64,
    /// Sequences per micro-batch per pipeline.
    #[serde(default = "default_micro_batch")]
    pub micro_batch: u64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// Gradient buckets per stage; 1 disables bucketing.
    #[serde(default = "default_buckets")]
    pub grad_buckets: u32,
}

impl ParallelPlan {
    pub fn new(tensor: u32, data: u32, pipeline: u32, global_batch: u64) -> Self {
        ParallelPlan {
            tensor,
            data,
            pipeline,
            global_batch,
            micro_batch: 1,
            schedule: Schedule::OneFOneB,
            grad_buckets: 1,
        }
    }

    pub fn with_micro_batch(mut self, b: u64) -> Self {
        self.micro_batch = b;
        self
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_buckets(mut self, k: u32) -> Self {
        self.grad_buckets = k;
        self
    }

    pub fn gpus(&self) -> u64 {
        self.tensor as u64 * self.data as u64 * self.pipeline as u64
    }

    /// `B / (d b)`; zero when the split is not integral.
    pub fn num_micro_batches(&self) -> u64 {
        let per_step = self.data as u64 * self.micro_batch;
        if per_step == 0 || !self.global_batch.is_multiple_of(per_step) {
            0
        } else {
            self.global_batch / per_step
        }
    }

    /// Micro-batches whose activations are live at once on a stage.
    pub fn in_flight_micro_batches(&self) -> u64 {
        let m = self.num_micro_batches();
        match self.schedule {
            Schedule::GPipe if self.pipeline > 1 => m,
            _ => m.min(self.pipeline as u64),
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<(), PlanError> {
        let (t, d, p) = (self.tensor, self.data, self.pipeline);
        if t == 0 || d == 0 || p == 0 {
            return Err(PlanError::ZeroDegree { t, d, p });
        }
        if self.micro_batch == 0 || self.grad_buckets == 0 {
            return Err(PlanError::ZeroBatchOrBuckets);
        }
        if !model.num_heads.is_multiple_of(t) || !model.hidden_size.is_multiple_of(t) {
            return Err(PlanError::TensorSplit {
                t,
                heads: model.num_heads,
                hidden: model.hidden_size,
            });
        }
        if p > model.num_layers {
            return Err(PlanError::TooManyStages {
                p,
                layers: model.num_layers,
            });
        }
        let per_step = d as u64 * self.micro_batch;
        if self.global_batch == 0 || !self.global_batch.is_multiple_of(per_step) {
            return Err(PlanError::BatchSplit {
                per_step,
                batch: self.global_batch,
            });
        }
        Ok(())
    }

    pub fn triple(&self) -> (u32, u32, u32) {
        (self.tensor, self.data, self.pipeline)
    }
}

impl fmt::Display for ParallelPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.tensor, self.data, self.pipeline)
    }
}

/// Per-GPU compute, memory and interconnect characteristics plus pricing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareSpec {
    pub gpus_per_node: u32,
    /// FLOP/s per GPU.
    pub peak_flops: f64,
    pub gpu_mem_bytes: u64,
    /// Aggregate NIC bandwidth per node, bits/s.
    pub inter_node_bmax: f64,
    /// Fraction of `inter_node_bmax` achieved by collectives.
    pub alpha: f64,
    pub dollars_per_gpu_hour: f64,
    /// Analytical intra-node bandwidth (bits/s) used when no profiled
    /// collective table covers a group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intra_node_bw: Option<f64>,
    /// Path of a profile file holding the intra-node collective table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intra_node_profile: Option<String>,
}

impl HardwareSpec {
    /// 8x A100 (FP16) nodes with 4x200 Gb/s HDR InfiniBand, priced like a P4d instance.
    pub fn a100_cluster() -> Self {
        HardwareSpec {
            gpus_per_node: 8,
            peak_flops: 312e12,
            gpu_mem_bytes: 80_000_000_000,
            inter_node_bmax: 800e9,
            alpha: 1.0,
            dollars_per_gpu_hour: 5.0,
            intra_node_bw: Some(2.4e12),
            intra_node_profile: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidHardware(msg.to_string()));
        if self.gpus_per_node == 0 {
            return bad("gpus_per_node must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.peak_flops > 0.0) || !(self.inter_node_bmax > 0.0) {
            return bad("peak_flops and inter_node_bmax must be positive");
        }
        if !(self.dollars_per_gpu_hour >= 0.0) {
            return bad("dollars_per_gpu_hour must be non-negative");
        }
        if let Some(bw) = self.intra_node_bw {
            if !(bw > 0.0) {
                return bad("intra_node_bw must be positive");
            }
        }
        Ok(())
    }

    pub fn effective_inter_node_bw(&self) -> f64 {
        self.alpha * self.inter_node_bmax
    }
}

/// A model trained with a plan on some hardware for a token budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub model: ModelConfig,
    pub plan: ParallelPlan,
    pub hw: HardwareSpec,
    pub total_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations_override: Option<u64>,
}

impl TrainingRun {
    pub fn tokens_per_iteration(&self) -> u64 {
        tokens_per_iteration(&self.plan, &self.model)
    }

    pub fn iterations(&self) -> u64 {
        self.iterations_override.unwrap_or_else(|| {
            iterations_for_tokens(self.total_tokens, self.tokens_per_iteration())
        })
    }

    pub fn flops_per_iteration(&self) -> f64 {
        flops_per_iteration(&self.model, self.tokens_per_iteration())
    }
}
