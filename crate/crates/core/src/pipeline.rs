//! End-to-end helpers: benchmark every linear shape, plan under a budget and
//! sweep budgets through the simulator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::costmodel::{self, CostBackend, CostError, CostSamples, DeviceProfile, SolverConfig};
use crate::model::{enumerate_modules, ModelSpec};
use crate::planner::{self, CurveSet, PlanError, PlacementPlan};
use crate::simulator::{self, SimConfig, SimError, StrategyKind, TimeModel};

/// Samples and fits cost curves once per linear shape class.
pub fn bench(
    spec: &ModelSpec,
    profile: &DeviceProfile,
    solver: &SolverConfig,
    backend: &CostBackend<'_>,
) -> Result<(Vec<CostSamples>, CurveSet), CostError> {
    let modules = enumerate_modules(spec);
    let seed = costmodel::seed_alpha(profile)?;
    let grid = costmodel::alpha_grid(seed, solver);
    let mut samples = Vec::new();
    let mut curves = Vec::new();
    for (class, module) in planner::linear_classes(&modules) {
        tracing::info!(?class, module = %module.id, "sampling");
        let s = costmodel::sample_costs(module, profile, &grid, backend)?;
        curves.push(costmodel::fit_curves(&s, solver)?);
        samples.push(s);
    }
    Ok((samples, CurveSet(curves)))
}

/// GPU memory budget as bytes or as a share of the model's weight bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Budget {
    Bytes(u64),
    Fraction(f64),
}

impl Budget {
    pub fn resolve(self, spec: &ModelSpec) -> u64 {
        match self {
            Budget::Bytes(b) => b,
            Budget::Fraction(f) => (f * spec.model_bytes() as f64).round() as u64,
        }
    }
}

impl FromStr for Budget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let parsed = if let Some(p) = s.strip_suffix('%') {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .map(|v| Budget::Fraction(v / 100.0))
        } else {
            s.parse::<u64>().ok().filter(|v| *v > 0).map(Budget::Bytes)
        };
        parsed.ok_or_else(|| format!("budget `{s}` must be a positive byte count or a percentage like 40%"))
    }
}

impl fmt::Display for Budget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Budget::Bytes(b) => write!(f, "{b}"),
            Budget::Fraction(x) => write!(f, "{}%", x * 100.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub batch: usize,
    pub prompt_len: usize,
    pub gen_len: usize,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            batch: 1,
            prompt_len: 32,
            gen_len: 16,
        }
    }
}

pub fn build_plan(
    spec: &ModelSpec,
    profile: &DeviceProfile,
    curves: &CurveSet,
    solver: &SolverConfig,
    budget: u64,
    workload: &Workload,
) -> Result<PlacementPlan, PlanError> {
    spec.validate()?;
    let modules = enumerate_modules(spec);
    let decisions = planner::plan_partitions(&modules, curves, solver, profile)?;
    let gains = planner::compute_gains(&decisions);
    let reserved = planner::reserved_bytes(spec, workload.batch, workload.prompt_len, workload.gen_len);
    let mut plan = planner::schedule_modules(&decisions, &gains, budget, reserved)?;
    plan.model = spec.name.clone();
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget_bytes: u64,
    pub budget_fraction: f64,
    pub feasible: bool,
    pub gpu_bytes_used: u64,
    pub promoted_kinds: usize,
    pub makespan: f64,
    /// Mean decode step time, seconds.
    pub per_token_latency: f64,
    pub tokens_per_sec: f64,
}

/// Mean decode step time of a timeline with one prefill pass.
pub fn decode_latency(timeline: &crate::trace::Timeline, gen_len: usize) -> f64 {
    if gen_len == 0 {
        return 0.0;
    }
    let prefill_end = timeline
        .events
        .iter()
        .filter(|e| e.step == 0)
        .map(|e| e.end)
        .fold(0.0, f64::max);
    (timeline.makespan - prefill_end) / gen_len as f64
}

pub fn sweep(
    spec: &ModelSpec,
    profile: &DeviceProfile,
    curves: &CurveSet,
    solver: &SolverConfig,
    budgets: &[u64],
    workload: &Workload,
    strategy: StrategyKind,
) -> Result<Vec<SweepRow>, crate::Error> {
    let total = spec.model_bytes() as f64;
    let cfg = SimConfig {
        steps: 1 + workload.gen_len,
        batch: workload.batch,
        prompt_len: workload.prompt_len,
    };
    let mut rows = Vec::new();
    for &budget in budgets {
        let row = match build_plan(spec, profile, curves, solver, budget, workload) {
            Ok(plan) => {
                let tl = simulator::simulate_timeline(&plan, &TimeModel::analytic(&plan, profile), strategy, &cfg)?;
                let lat = decode_latency(&tl, workload.gen_len);
                SweepRow {
                    budget_bytes: budget,
                    budget_fraction: budget as f64 / total,
                    feasible: true,
                    gpu_bytes_used: plan.gpu_bytes_used,
                    promoted_kinds: plan.promoted_kinds.len(),
                    makespan: tl.makespan,
                    per_token_latency: lat,
                    tokens_per_sec: if lat > 0.0 { 1.0 / lat } else { 0.0 },
                }
            }
            Err(PlanError::InfeasibleBudget { .. }) => SweepRow {
                budget_bytes: budget,
                budget_fraction: budget as f64 / total,
                feasible: false,
                gpu_bytes_used: 0,
                promoted_kinds: 0,
                makespan: f64::NAN,
                per_token_latency: f64::NAN,
                tokens_per_sec: f64::NAN,
            },
            Err(e) => return Err(e.into()),
        };
        rows.push(row);
    }
    Ok(rows)
}

impl From<SimError> for crate::Error {
    fn from(e: SimError) -> Self {
        crate::Error::Sim(e)
    }
}
