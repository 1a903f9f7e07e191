#![allow(dead_code)]

use std::path::Path;

use hetsplit::costmodel::{CostBackend, DeviceProfile, SolverConfig};
use hetsplit::model::{load_model_spec, ModelSpec};
use hetsplit::pipeline::{self, Workload};
use hetsplit::planner::{CurveSet, PlacementPlan, PlanError};

pub fn preset_model(name: &str) -> ModelSpec {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../presets/models/{name}.json"));
    load_model_spec(p).unwrap()
}

pub fn preset_profile(name: &str) -> DeviceProfile {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../presets/profiles/{name}.json"));
    DeviceProfile::load(p).unwrap()
}

pub fn toy(layers: usize, hidden: usize, ffn: usize, heads: usize) -> ModelSpec {
    ModelSpec {
        name: format!("toy-{layers}x{hidden}"),
        num_layers: layers,
        hidden_dim: hidden,
        ffn_dim: ffn,
        num_heads: heads,
        vocab_size: 64,
        max_positions: 64,
        dtype_bytes: 4,
    }
}

pub fn curves(spec: &ModelSpec, profile: &DeviceProfile) -> CurveSet {
    pipeline::bench(spec, profile, &SolverConfig::default(), &CostBackend::Analytic)
        .unwrap()
        .1
}

pub fn minimum_budget(spec: &ModelSpec, profile: &DeviceProfile, curves: &CurveSet, w: &Workload) -> u64 {
    match pipeline::build_plan(spec, profile, curves, &SolverConfig::default(), 1, w) {
        Err(PlanError::InfeasibleBudget { minimum, .. }) => minimum,
        other => panic!("expected an infeasible budget, got {other:?}"),
    }
}

pub fn plan_at(spec: &ModelSpec, profile: &DeviceProfile, budget: Option<u64>, w: &Workload) -> PlacementPlan {
    let c = curves(spec, profile);
    let b = budget.unwrap_or_else(|| minimum_budget(spec, profile, &c, w));
    pipeline::build_plan(spec, profile, &c, &SolverConfig::default(), b, w).unwrap()
}

pub fn small_workload() -> Workload {
    Workload {
        batch: 1,
        prompt_len: 8,
        gen_len: 4,
    }
}
