//! Shared fixtures for the criterion benches.

use plansim_core::{HardwareSpec, ModelConfig, ParallelPlan};

/// 530B-parameter model with its largest Table-style plan.
pub fn mt_nlg() -> (ModelConfig, ParallelPlan) {
    (
        ModelConfig::new("mt-nlg", 20480, 105, 128, 2048),
        ParallelPlan::new(8, 8, 35, 1920),
    )
}

/// A 1.3B GPT small enough to sweep in a benchmark iteration.
pub fn gpt_1p3b() -> ModelConfig {
    ModelConfig::new("gpt-1.3b", 2048, 24, 16, 2048)
}

pub fn hardware() -> HardwareSpec {
    HardwareSpec::a100_cluster()
}
