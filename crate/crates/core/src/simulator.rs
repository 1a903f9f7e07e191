//! Deterministic lane-level schedule of a plan under each offload strategy.
//!
//! Modules run in execution order; each starts when the previous one ends.
//! Inside a split module the strategies differ only in their dependencies:
//!
//! * Hybrid: CPU compute, the transfer of the already pinned shard and the
//!   pin of the group's next shard all start together; GPU compute waits for
//!   the transfer and that pin.
//! * PinnedBlocking: the module pins its own shard first; CPU compute and the
//!   transfer wait for it.
//! * Naive: no pin lane. The activation hops to the host over the transfer
//!   lane, the CPU copies the pageable shard into a bounce buffer, then CPU
//!   compute and the transfer proceed and the CPU result hops back.
//!
//! The first shard of each group is pinned before the run and is not part of
//! the makespan.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::costmodel::{CostCurves, DeviceProfile};
use crate::engine::activation_bytes;
use crate::model::{ModuleGroup, ModuleId, ModuleKind, ModuleSpec};
use crate::planner::{PartitionDecision, Placement, PlacementPlan};
use crate::trace::{EventKind, Lane, Timeline, TimelineEvent};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("no time model for module {0}")]
    MissingTimes(ModuleId),
    #[error("timeline is empty")]
    Empty,
    #[error("warmup of {warmup} events exceeds the {events} events in the timeline")]
    Range { warmup: usize, events: usize },
    #[error("invalid simulation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Naive,
    PinnedBlocking,
    Hybrid,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Naive, StrategyKind::PinnedBlocking, StrategyKind::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Naive => "naive",
            StrategyKind::PinnedBlocking => "pinned",
            StrategyKind::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(StrategyKind::Naive),
            "pinned" | "pinned_blocking" | "pinnedblocking" => Ok(StrategyKind::PinnedBlocking),
            "hybrid" => Ok(StrategyKind::Hybrid),
            other => Err(format!("unknown strategy `{other}` (expected naive, pinned or hybrid)")),
        }
    }
}

/// Seconds per lane for one split module.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LaneTimes {
    pub cpu: f64,
    pub pin: f64,
    pub trans: f64,
    pub gpu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModuleTimes {
    Resident { gpu: f64 },
    Split { lanes: LaneTimes, in_dim: usize, cpu_cols: usize },
}

/// Per-module lane times plus the rate used for activation hops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeModel {
    pub modules: BTreeMap<ModuleId, ModuleTimes>,
    pub hop_rate: f64,
}

impl TimeModel {
    /// Times from the profile's rates at each split's rounded α.
    pub fn analytic(plan: &PlacementPlan, profile: &DeviceProfile) -> Self {
        let modules = plan
            .decisions
            .iter()
            .map(|d| {
                let w = d.module.param_bytes as f64;
                let t = match d.placement {
                    Placement::GpuResident => ModuleTimes::Resident { gpu: w / profile.v_gpu },
                    Placement::HeteroSplit => {
                        let shard = d.shard_bytes() as f64;
                        ModuleTimes::Split {
                            lanes: LaneTimes {
                                cpu: (w - shard) / profile.v_cpu,
                                pin: shard / profile.v_pin,
                                trans: shard / profile.v_trans,
                                gpu: shard / profile.v_gpu,
                            },
                            in_dim: d.module.in_dim,
                            cpu_cols: d.module.out_dim - d.split_columns(),
                        }
                    }
                };
                (d.id(), t)
            })
            .collect();
        Self {
            modules,
            hop_rate: profile.v_trans,
        }
    }

    /// Times from the planner's curve estimates.
    pub fn from_estimates(plan: &PlacementPlan, hop_rate: f64) -> Self {
        let modules = plan
            .decisions
            .iter()
            .map(|d| (d.id(), estimate(d)))
            .collect();
        Self { modules, hop_rate }
    }

    fn get(&self, id: ModuleId) -> Result<ModuleTimes, SimError> {
        self.modules.get(&id).copied().ok_or(SimError::MissingTimes(id))
    }
}

fn estimate(d: &PartitionDecision) -> ModuleTimes {
    match d.placement {
        Placement::GpuResident => ModuleTimes::Resident { gpu: d.est_t_gpu },
        Placement::HeteroSplit => ModuleTimes::Split {
            lanes: LaneTimes {
                cpu: d.est_t_cpu,
                pin: d.est_t_pin,
                trans: d.est_t_trans,
                gpu: d.est_t_gpu,
            },
            in_dim: d.module.in_dim,
            cpu_cols: d.module.out_dim - d.split_columns(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Forward passes; pass 0 processes the prompt.
    pub steps: usize,
    pub batch: usize,
    pub prompt_len: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            steps: 1,
            batch: 1,
            prompt_len: 1,
        }
    }
}

impl SimConfig {
    pub fn for_run(prompt_len: usize, gen_len: usize) -> Self {
        Self {
            steps: 1 + gen_len,
            batch: 1,
            prompt_len,
        }
    }
}

struct Sched<'a> {
    free: [f64; 4],
    events: &'a mut Vec<TimelineEvent>,
    module: ModuleId,
    step: usize,
}

impl Sched<'_> {
    /// Books `duration` on `lane` no earlier than `ready`; returns the end.
    fn book(&mut self, lane: Lane, ready: f64, duration: f64, kind: EventKind, module: Option<ModuleId>) -> f64 {
        let start = ready.max(self.free[lane.index()]);
        let end = start + duration.max(0.0);
        self.free[lane.index()] = end;
        self.events.push(TimelineEvent {
            lane,
            module: module.unwrap_or(self.module),
            step: self.step,
            kind,
            start,
            end,
        });
        end
    }
}

/// Hop durations for the naive strategy.
#[derive(Debug, Clone, Copy, Default)]
struct Hops {
    inbound: f64,
    outbound: f64,
}

/// Schedules one split module starting at `s`; returns its end.
fn schedule_split(
    sched: &mut Sched<'_>,
    strategy: StrategyKind,
    s: f64,
    t: LaneTimes,
    successor: Option<(ModuleId, f64)>,
    hops: Hops,
) -> f64 {
    match strategy {
        StrategyKind::Hybrid => {
            let cpu_end = sched.book(Lane::Cpu, s, t.cpu, EventKind::Compute, None);
            let trans_end = sched.book(Lane::Trans, s, t.trans, EventKind::Transfer, None);
            let (succ, succ_pin) = successor.map_or((None, t.pin), |(m, p)| (Some(m), p));
            let pin_end = sched.book(Lane::Pin, s, succ_pin, EventKind::Pin, succ);
            let gpu_end = sched.book(Lane::Gpu, trans_end.max(pin_end), t.gpu, EventKind::Compute, None);
            cpu_end.max(gpu_end)
        }
        StrategyKind::PinnedBlocking => {
            let pin_end = sched.book(Lane::Pin, s, t.pin, EventKind::Pin, None);
            let cpu_end = sched.book(Lane::Cpu, pin_end, t.cpu, EventKind::Compute, None);
            let trans_end = sched.book(Lane::Trans, pin_end, t.trans, EventKind::Transfer, None);
            let gpu_end = sched.book(Lane::Gpu, trans_end, t.gpu, EventKind::Compute, None);
            cpu_end.max(gpu_end)
        }
        StrategyKind::Naive => {
            let hop_in_end = sched.book(Lane::Trans, s, hops.inbound, EventKind::ActivationIn, None);
            let stage_end = sched.book(Lane::Cpu, s, t.pin, EventKind::Stage, None);
            let ready = hop_in_end.max(stage_end);
            let cpu_end = sched.book(Lane::Cpu, ready, t.cpu, EventKind::Compute, None);
            let trans_end = sched.book(Lane::Trans, ready, t.trans, EventKind::Transfer, None);
            let gpu_end = sched.book(Lane::Gpu, trans_end, t.gpu, EventKind::Compute, None);
            let hop_out_end = sched.book(Lane::Trans, cpu_end, hops.outbound, EventKind::ActivationOut, None);
            gpu_end.max(hop_out_end)
        }
    }
}

/// Next split module in the same group, wrapping to the first.
pub fn group_successors(plan: &PlacementPlan) -> BTreeMap<ModuleId, ModuleId> {
    let mut groups: BTreeMap<ModuleGroup, Vec<ModuleId>> = BTreeMap::new();
    for d in plan.split_modules() {
        groups.entry(d.module.group).or_default().push(d.id());
    }
    let mut out = BTreeMap::new();
    for members in groups.values() {
        for (i, &m) in members.iter().enumerate() {
            out.insert(m, members[(i + 1) % members.len()]);
        }
    }
    out
}

pub fn simulate_timeline(
    plan: &PlacementPlan,
    model: &TimeModel,
    strategy: StrategyKind,
    config: &SimConfig,
) -> Result<Timeline, SimError> {
    if config.batch == 0 || config.prompt_len == 0 {
        return Err(SimError::Config("batch and prompt length must be positive".into()));
    }
    if !(model.hop_rate > 0.0) {
        return Err(SimError::Config("hop rate must be positive".into()));
    }
    let successors = group_successors(plan);
    let times: Vec<(ModuleId, ModuleTimes)> = plan
        .decisions
        .iter()
        .map(|d| model.get(d.id()).map(|t| (d.id(), t)))
        .collect::<Result<_, _>>()?;
    let pin_time = |m: ModuleId| match model.modules.get(&m) {
        Some(ModuleTimes::Split { lanes, .. }) => lanes.pin,
        _ => 0.0,
    };

    let mut events = Vec::new();
    let mut now = 0.0;
    let mut free = [0.0; 4];
    for step in 0..config.steps {
        let rows = config.batch * if step == 0 { config.prompt_len } else { 1 };
        for &(id, t) in &times {
            let mut sched = Sched {
                free,
                events: &mut events,
                module: id,
                step,
            };
            now = match t {
                ModuleTimes::Resident { gpu } => sched.book(Lane::Gpu, now, gpu, EventKind::Compute, None),
                ModuleTimes::Split { lanes, in_dim, cpu_cols } => {
                    let hops = Hops {
                        inbound: activation_bytes(rows, in_dim) / model.hop_rate,
                        outbound: activation_bytes(rows, cpu_cols) / model.hop_rate,
                    };
                    let succ = successors.get(&id).map(|&m| (m, pin_time(m)));
                    schedule_split(&mut sched, strategy, now, lanes, succ, hops)
                }
            };
            free = sched.free;
        }
    }
    Ok(Timeline {
        events,
        makespan: now,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneBreakdown {
    /// Interval the fractions are measured over.
    pub window: (f64, f64),
    pub busy: BTreeMap<Lane, f64>,
    pub fractions: BTreeMap<Lane, f64>,
    pub idle: BTreeMap<Lane, Vec<(f64, f64)>>,
}

/// Events of the first layer (and the embedding) of the first pass.
pub fn default_warmup(timeline: &Timeline) -> usize {
    timeline
        .events
        .iter()
        .take_while(|e| e.step == 0 && (e.module.kind == ModuleKind::Embedding || e.module.layer == 0))
        .count()
}

pub fn utilization_breakdown(timeline: &Timeline, warmup_events: usize) -> Result<LaneBreakdown, SimError> {
    if timeline.events.is_empty() {
        return Err(SimError::Empty);
    }
    if warmup_events > timeline.events.len() {
        return Err(SimError::Range {
            warmup: warmup_events,
            events: timeline.events.len(),
        });
    }
    let rest = &timeline.events[warmup_events..];
    let hi = timeline.makespan;
    let lo = rest.iter().map(|e| e.start).fold(hi, f64::min);
    let span = hi - lo;
    let mut busy = BTreeMap::new();
    let mut fractions = BTreeMap::new();
    let mut idle = BTreeMap::new();
    for lane in Lane::ALL {
        let mut evs: Vec<&TimelineEvent> = rest.iter().filter(|e| e.lane == lane).collect();
        evs.sort_by(|a, b| a.start.total_cmp(&b.start));
        let b: f64 = evs.iter().map(|e| e.duration()).sum();
        let mut gaps = Vec::new();
        let mut cursor = lo;
        for e in &evs {
            if e.start > cursor + 1e-12 {
                gaps.push((cursor, e.start));
            }
            cursor = cursor.max(e.end);
        }
        if hi > cursor + 1e-12 {
            gaps.push((cursor, hi));
        }
        busy.insert(lane, b);
        fractions.insert(lane, if span > 0.0 { (b / span).clamp(0.0, 1.0) } else { 0.0 });
        idle.insert(lane, gaps);
    }
    Ok(LaneBreakdown {
        window: (lo, hi),
        busy,
        fractions,
        idle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: StrategyKind,
    pub makespan: f64,
    pub breakdown: LaneBreakdown,
}

pub fn compare_strategies(plan: &PlacementPlan, model: &TimeModel, config: &SimConfig) -> Result<Vec<StrategyRow>, SimError> {
    StrategyKind::ALL
        .iter()
        .map(|&strategy| {
            let t = simulate_timeline(plan, model, strategy, config)?;
            Ok(StrategyRow {
                strategy,
                makespan: t.makespan,
                breakdown: utilization_breakdown(&t, default_warmup(&t))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub module_id: ModuleId,
    pub strategy: StrategyKind,
    /// `(alpha, period)` pairs.
    pub points: Vec<(f64, f64)>,
    pub argmin: f64,
}

/// Uniform α grid over `[0, 1]`.
pub fn unit_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

/// Steady-state period of one split module over an α grid, scheduled by
/// the same code as full timelines.
pub fn predict_alpha_sensitivity(
    module: &ModuleSpec,
    curves: &CostCurves,
    strategy: StrategyKind,
    grid: &[f64],
) -> SensitivityCurve {
    let mut events = Vec::new();
    let points: Vec<(f64, f64)> = grid
        .iter()
        .map(|&a| {
            let t = LaneTimes {
                cpu: curves.cpu(a).max(0.0),
                pin: curves.pin(a).max(0.0),
                trans: curves.trans(a).max(0.0),
                gpu: curves.gpu(a).max(0.0),
            };
            events.clear();
            let mut sched = Sched {
                free: [0.0; 4],
                events: &mut events,
                module: module.id,
                step: 0,
            };
            (a, schedule_split(&mut sched, strategy, 0.0, t, Some((module.id, t.pin)), Hops::default()))
        })
        .collect();
    let argmin = points
        .iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|p| p.0)
        .unwrap_or(f64::NAN);
    SensitivityCurve {
        module_id: module.id,
        strategy,
        points,
        argmin,
    }
}
