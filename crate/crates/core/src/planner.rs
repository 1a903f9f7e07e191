//! Per-module split ratios and GPU residency under a memory budget.
//!
//! Every linear starts as a heterogeneous split with the balanced α from
//! its cost curves. The scheduler then promotes whole module kinds (the same
//! kind in every layer) to full GPU residency, highest time-saved-per-byte
//! first, while the budget allows.
//!
//! GPU memory accounting: resident weights and biases, the biases of split
//! linears, the reserved KV cache and activation space, and two device
//! staging slots per split group sized to the group's largest GPU shard.
//! Split shards themselves are streamed each pass and are not resident.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::artifact::Provenance;
use crate::costmodel::{self, CostCurves, CostError, DeviceProfile, ShapeClass, SolverConfig};
use crate::model::{self, ModelSpec, ModuleGroup, ModuleId, ModuleKind, ModuleSpec};

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("no cost curves for module {0}")]
    MissingCurves(ModuleId),
    #[error("budget {budget} bytes is below the minimum feasible budget {minimum} bytes")]
    InfeasibleBudget { budget: u64, minimum: u64 },
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Placement {
    HeteroSplit,
    GpuResident,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionDecision {
    pub module: ModuleSpec,
    pub placement: Placement,
    /// GPU share of the weight columns; 1 for resident modules.
    pub alpha: f64,
    pub est_t_cpu: f64,
    pub est_t_pin: f64,
    pub est_t_trans: f64,
    pub est_t_com: f64,
    pub est_t_gpu: f64,
    /// GPU compute time if the whole module were resident.
    pub est_t_gpu_resident: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_warning: Option<String>,
}

impl PartitionDecision {
    pub fn id(&self) -> ModuleId {
        self.module.id
    }

    pub fn is_split(&self) -> bool {
        self.placement == Placement::HeteroSplit
    }

    /// Weight columns in the GPU shard, `round(alpha * out_dim)`.
    pub fn split_columns(&self) -> usize {
        crate::engine::split_index(self.alpha, self.module.out_dim)
    }

    /// α after rounding to whole columns.
    pub fn effective_alpha(&self) -> f64 {
        if self.module.out_dim == 0 {
            self.alpha
        } else {
            self.split_columns() as f64 / self.module.out_dim as f64
        }
    }

    /// Bytes of the streamed GPU shard; zero unless split.
    pub fn shard_bytes(&self) -> u64 {
        if self.is_split() && self.module.out_dim > 0 {
            self.module.param_bytes * self.split_columns() as u64 / self.module.out_dim as u64
        } else {
            0
        }
    }

    fn promote(&mut self) {
        self.placement = Placement::GpuResident;
        self.alpha = 1.0;
        self.est_t_cpu = 0.0;
        self.est_t_pin = 0.0;
        self.est_t_trans = 0.0;
        self.est_t_com = 0.0;
        self.est_t_gpu = self.est_t_gpu_resident;
    }
}

/// Cost curves keyed by shape class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CurveSet(pub Vec<CostCurves>);

impl CurveSet {
    pub fn get(&self, class: &ShapeClass) -> Option<&CostCurves> {
        self.0.iter().find(|c| &c.class == class)
    }
}

/// Distinct linear shape classes in execution order, each with its first module.
pub fn linear_classes(modules: &[ModuleSpec]) -> Vec<(ShapeClass, &ModuleSpec)> {
    let mut seen = BTreeSet::new();
    modules
        .iter()
        .filter(|m| m.is_linear())
        .filter(|m| seen.insert(ShapeClass::of(m)))
        .map(|m| (ShapeClass::of(m), m))
        .collect()
}

pub fn plan_partitions(
    modules: &[ModuleSpec],
    curves: &CurveSet,
    solver: &SolverConfig,
    profile: &DeviceProfile,
) -> Result<Vec<PartitionDecision>, PlanError> {
    solver.validate()?;
    profile.validate()?;
    let seed = costmodel::seed_alpha(profile)?;
    let mut solved: BTreeMap<ShapeClass, costmodel::AlphaSolution> = BTreeMap::new();
    let mut out = Vec::with_capacity(modules.len());
    for m in modules {
        let resident_gpu = m.param_bytes as f64 / profile.v_gpu;
        if !m.is_linear() {
            out.push(PartitionDecision {
                module: m.clone(),
                placement: Placement::GpuResident,
                alpha: 1.0,
                est_t_cpu: 0.0,
                est_t_pin: 0.0,
                est_t_trans: 0.0,
                est_t_com: 0.0,
                est_t_gpu: resident_gpu,
                est_t_gpu_resident: resident_gpu,
                solver_warning: None,
            });
            continue;
        }
        let class = ShapeClass::of(m);
        let c = curves.get(&class).ok_or(PlanError::MissingCurves(m.id))?;
        let sol = match solved.get(&class) {
            Some(s) => s.clone(),
            None => {
                let s = costmodel::solve_alpha(c, seed, solver)?;
                solved.insert(class, s.clone());
                s
            }
        };
        let a = sol.alpha;
        out.push(PartitionDecision {
            module: m.clone(),
            placement: Placement::HeteroSplit,
            alpha: a,
            est_t_cpu: c.cpu(a).max(0.0),
            est_t_pin: c.pin(a).max(0.0),
            est_t_trans: c.trans(a).max(0.0),
            est_t_com: c.com(a).max(0.0),
            est_t_gpu: c.gpu(a).max(0.0),
            est_t_gpu_resident: resident_gpu,
            solver_warning: sol.warning,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementGain {
    pub module_id: ModuleId,
    /// Seconds saved per byte of GPU memory.
    pub gain: f64,
    pub t_cpu_saved: f64,
    pub mem_cost: u64,
}

/// Gains of promoting each split module, best first; ties by `(layer, kind)`.
pub fn compute_gains(decisions: &[PartitionDecision]) -> Vec<PlacementGain> {
    let mut gains: Vec<PlacementGain> = decisions
        .iter()
        .filter(|d| d.is_split())
        .filter_map(|d| {
            // shards are streamed, so nothing of the module is resident yet
            let mem_cost = d.module.param_bytes;
            if mem_cost == 0 {
                tracing::warn!("module {} has no weight bytes; skipped", d.id());
                return None;
            }
            Some(PlacementGain {
                module_id: d.id(),
                gain: d.est_t_cpu / mem_cost as f64,
                t_cpu_saved: d.est_t_cpu,
                mem_cost,
            })
        })
        .collect();
    gains.sort_by(|a, b| {
        b.gain
            .total_cmp(&a.gain)
            .then_with(|| a.module_id.cmp(&b.module_id))
    });
    gains
}

/// Device staging slots: two per split group, each the group's largest shard.
pub fn staging_bytes(decisions: &[PartitionDecision]) -> u64 {
    let mut largest: BTreeMap<ModuleGroup, u64> = BTreeMap::new();
    for d in decisions.iter().filter(|d| d.is_split()) {
        let e = largest.entry(d.module.group).or_default();
        *e = (*e).max(d.shard_bytes());
    }
    largest.values().map(|b| 2 * b).sum()
}

pub fn gpu_bytes(decisions: &[PartitionDecision], reserved_bytes: u64) -> u64 {
    let weights: u64 = decisions
        .iter()
        .map(|d| match d.placement {
            Placement::GpuResident => d.module.param_bytes + d.module.bias_bytes,
            Placement::HeteroSplit => d.module.bias_bytes,
        })
        .sum();
    reserved_bytes + weights + staging_bytes(decisions)
}

/// KV cache for the full prompt plus generation, and prefill activations.
pub fn reserved_bytes(spec: &ModelSpec, batch: usize, prompt_len: usize, gen_len: usize) -> u64 {
    let kv = model::kv_cache_bytes(spec, batch, prompt_len + gen_len);
    let act = 2 * (batch * prompt_len.max(1) * spec.ffn_dim * spec.dtype_bytes) as u64;
    kv + act
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementPlan {
    pub model: String,
    pub decisions: Vec<PartitionDecision>,
    pub gains: Vec<PlacementGain>,
    pub budget: u64,
    pub reserved_bytes: u64,
    pub staging_bytes: u64,
    pub gpu_bytes_used: u64,
    /// Placement of every linear kind, identical in all layers.
    pub residency_pattern: BTreeMap<ModuleKind, Placement>,
    pub promoted_kinds: Vec<ModuleKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl PlacementPlan {
    pub fn split_modules(&self) -> impl Iterator<Item = &PartitionDecision> {
        self.decisions.iter().filter(|d| d.is_split())
    }
}

fn promote_kind(decisions: &mut [PartitionDecision], kind: ModuleKind) {
    decisions
        .iter_mut()
        .filter(|d| d.module.kind() == kind)
        .for_each(PartitionDecision::promote);
}

/// Kinds in the order their best module appears in `gains`.
fn kind_order(gains: &[PlacementGain]) -> Vec<ModuleKind> {
    let mut seen = BTreeSet::new();
    gains
        .iter()
        .map(|g| g.module_id.kind)
        .filter(|k| seen.insert(*k))
        .collect()
}

pub fn schedule_modules(
    decisions: &[PartitionDecision],
    gains: &[PlacementGain],
    budget: u64,
    reserved_bytes: u64,
) -> Result<PlacementPlan, PlanError> {
    let mut current = decisions.to_vec();
    let minimum = gpu_bytes(&current, reserved_bytes);
    if budget < minimum {
        return Err(PlanError::InfeasibleBudget { budget, minimum });
    }
    let order = kind_order(gains);
    let mut promoted: Vec<ModuleKind> = Vec::new();
    loop {
        let mut changed = false;
        for &kind in &order {
            if promoted.contains(&kind) {
                continue;
            }
            let mut trial = current.clone();
            promote_kind(&mut trial, kind);
            let used = gpu_bytes(&trial, reserved_bytes);
            if used <= budget {
                tracing::debug!(?kind, used, budget, "promoted to GPU residency");
                current = trial;
                promoted.push(kind);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let residency_pattern = current
        .iter()
        .filter(|d| d.module.is_linear())
        .map(|d| (d.module.kind(), d.placement))
        .collect();
    Ok(PlacementPlan {
        model: String::new(),
        gpu_bytes_used: gpu_bytes(&current, reserved_bytes),
        staging_bytes: staging_bytes(&current),
        decisions: current,
        gains: gains.to_vec(),
        budget,
        reserved_bytes,
        residency_pattern,
        promoted_kinds: promoted,
        provenance: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    BudgetExceeded { used: u64, budget: u64 },
    AccountingMismatch { recorded: u64, recomputed: u64 },
    AlphaRange { module: ModuleId, alpha: f64 },
    NonLinearSplit { module: ModuleId },
    NonUniformResidency { kind: ModuleKind },
}

pub fn validate_plan(plan: &PlacementPlan) -> Vec<Violation> {
    let mut out = Vec::new();
    if plan.gpu_bytes_used > plan.budget {
        out.push(Violation::BudgetExceeded {
            used: plan.gpu_bytes_used,
            budget: plan.budget,
        });
    }
    let recomputed = gpu_bytes(&plan.decisions, plan.reserved_bytes);
    if recomputed != plan.gpu_bytes_used {
        out.push(Violation::AccountingMismatch {
            recorded: plan.gpu_bytes_used,
            recomputed,
        });
    }
    let mut per_kind: BTreeMap<ModuleKind, BTreeSet<Placement>> = BTreeMap::new();
    for d in &plan.decisions {
        if d.is_split() {
            if !d.module.is_linear() {
                out.push(Violation::NonLinearSplit { module: d.id() });
            }
            if !(d.alpha > 0.0 && d.alpha < 1.0) {
                out.push(Violation::AlphaRange {
                    module: d.id(),
                    alpha: d.alpha,
                });
            }
        }
        per_kind.entry(d.module.kind()).or_default().insert(d.placement);
    }
    for (kind, placements) in per_kind {
        if placements.len() > 1 {
            out.push(Violation::NonUniformResidency { kind });
        }
    }
    out
}
