use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use hetsplit::artifact::{Artifact, Provenance};
use hetsplit::costmodel::{BenchSession, CostBackend, CostSamples, DeviceProfile, SolverConfig};
use hetsplit::engine::{self, measure_lane_utilization, weights::ModelWeights, ExecutionReport};
use hetsplit::model::{load_model_spec, ModelSpec};
use hetsplit::pipeline::{self, Budget, SweepRow, Workload};
use hetsplit::planner::{self, CurveSet, PlacementPlan, PlanError};
use hetsplit::simulator::{self, LaneBreakdown, SimConfig, StrategyKind, StrategyRow, TimeModel};
use hetsplit::trace::{self, Lane};

use crate::{Backend, BenchArgs, Common, PlanArgs, RunArgs, SimulateArgs, SolverArgs, SweepArgs};

/// Largest model the toy engine will materialize, in fp32 weight bytes.
const ENGINE_WEIGHT_LIMIT: u64 = 1 << 30;
const LOCK_WAIT: Duration = Duration::from_secs(600);

#[derive(Debug, Serialize, Deserialize)]
pub struct SamplesBody {
    pub samples: Vec<CostSamples>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CurvesBody {
    pub solver: SolverConfig,
    pub curves: CurveSet,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StrategiesBody {
    pub normalization: String,
    pub strategies: Vec<StrategyRow>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BreakdownBody {
    pub strategy: StrategyKind,
    pub makespan: f64,
    pub normalization: String,
    pub breakdown: LaneBreakdown,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunBody {
    #[serde(flatten)]
    pub report: ExecutionReport,
    pub simulated_makespan: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lane_utilization: Option<BTreeMap<Lane, f64>>,
}

pub const NORMALIZATION: &str = "busy time divided by the steady-state window of the makespan";

/// Maps an error chain to the process exit code.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let infeasible = e.chain().any(|c| {
        matches!(c.downcast_ref::<PlanError>(), Some(PlanError::InfeasibleBudget { .. }))
            || matches!(
                c.downcast_ref::<hetsplit::Error>(),
                Some(hetsplit::Error::Plan(PlanError::InfeasibleBudget { .. }))
            )
    });
    if infeasible {
        2
    } else {
        1
    }
}

struct Inputs {
    spec: ModelSpec,
    profile: DeviceProfile,
}

impl Inputs {
    fn load(c: &Common) -> Result<Self> {
        let spec = load_model_spec(&c.model).with_context(|| format!("loading model {}", c.model.display()))?;
        spec.validate()?;
        let profile = DeviceProfile::load(&c.profile).with_context(|| format!("loading profile {}", c.profile.display()))?;
        profile.validate()?;
        for w in profile.warnings() {
            tracing::warn!("{w}");
        }
        if c.batch == 0 {
            bail!("batch must be at least 1");
        }
        Ok(Self { spec, profile })
    }

    fn provenance(&self, c: &Common) -> Provenance {
        Provenance::new(&self.spec, &self.profile).with_seed(c.seed)
    }
}

fn workload(c: &Common) -> Workload {
    Workload {
        batch: c.batch,
        prompt_len: c.prompt_len,
        gen_len: c.gen_len,
    }
}

fn solver(s: &SolverArgs) -> Result<SolverConfig> {
    let cfg = SolverConfig {
        gamma: s.gamma,
        lambda: s.lambda,
        degree: s.degree,
        tolerance: s.tolerance,
        include_gpu: s.include_gpu,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    tracing::info!(path = %path.display(), "wrote");
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn csv_with_header<S: Serialize>(header: &str, rows: impl IntoIterator<Item = S>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = String::from_utf8(w.into_inner()?)?;
    Ok(format!("{header}{body}"))
}

/// Exclusive lock file, removed on drop.
struct LockFile(PathBuf);

impl LockFile {
    fn acquire(path: PathBuf) -> Result<Self> {
        let start = Instant::now();
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(Self(path)),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if start.elapsed() > LOCK_WAIT {
                        bail!("timed out waiting for {}", path.display());
                    }
                    tracing::info!(path = %path.display(), "waiting for another benchmark");
                    thread::sleep(Duration::from_millis(200));
                }
                Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
            }
        }
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let inputs = Inputs::load(&a.common)?;
    let cfg = solver(&a.solver)?;
    fs::create_dir_all(&a.common.out)?;
    let (samples, curves) = match a.backend {
        Backend::Analytic => pipeline::bench(&inputs.spec, &inputs.profile, &cfg, &CostBackend::Analytic)?,
        Backend::Measured => {
            let _lock = LockFile::acquire(a.common.out.join(".bench.lock"))?;
            let session = BenchSession::acquire();
            pipeline::bench(&inputs.spec, &inputs.profile, &cfg, &CostBackend::Measured(&session))?
        }
    };
    let prov = inputs
        .provenance(&a.common)
        .with("backend", format!("{:?}", a.backend).to_lowercase());
    write_json(
        &a.common.out.join("samples.json"),
        &Artifact {
            provenance: prov.clone(),
            body: SamplesBody { samples },
        },
    )?;
    let n = curves.0.len();
    write_json(
        &a.common.out.join("curves.json"),
        &Artifact {
            provenance: prov,
            body: CurvesBody { solver: cfg, curves },
        },
    )?;
    println!("fitted {n} shape classes into {}", a.common.out.join("curves.json").display());
    Ok(())
}

pub fn plan(a: &PlanArgs) -> Result<()> {
    let inputs = Inputs::load(&a.common)?;
    let cfg = solver(&a.solver)?;
    let curves_path = a.curves.clone().unwrap_or_else(|| a.common.out.join("curves.json"));
    let curves: Artifact<CurvesBody> = read_json(&curves_path)?;
    let budget = a.budget.resolve(&inputs.spec);
    let mut plan = match pipeline::build_plan(
        &inputs.spec,
        &inputs.profile,
        &curves.body.curves,
        &cfg,
        budget,
        &workload(&a.common),
    ) {
        Ok(p) => p,
        Err(e @ PlanError::InfeasibleBudget { minimum, .. }) => {
            println!("minimum feasible budget: {minimum} bytes");
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let violations = planner::validate_plan(&plan);
    if !violations.is_empty() {
        bail!("plan failed validation: {violations:?}");
    }
    plan.provenance = Some(
        inputs
            .provenance(&a.common)
            .with("budget", a.budget)
            .with("batch", a.common.batch)
            .with("prompt_len", a.common.prompt_len)
            .with("gen_len", a.common.gen_len)
            .with("solver", serde_json::to_string(&cfg)?),
    );
    let path = a.common.out.join("plan.json");
    write_json(&path, &plan)?;
    println!(
        "{} of {} linear modules split, {} kinds resident, {} / {} GPU bytes -> {}",
        plan.split_modules().count(),
        plan.decisions.iter().filter(|d| d.module.is_linear()).count(),
        plan.promoted_kinds.len(),
        plan.gpu_bytes_used,
        plan.budget,
        path.display()
    );
    Ok(())
}

fn load_plan(c: &Common, explicit: &Option<PathBuf>) -> Result<PlacementPlan> {
    let path = explicit.clone().unwrap_or_else(|| c.out.join("plan.json"));
    let plan: PlacementPlan = read_json(&path)?;
    Ok(plan)
}

fn sim_config(c: &Common) -> SimConfig {
    SimConfig {
        steps: 1 + c.gen_len,
        batch: c.batch,
        prompt_len: c.prompt_len,
    }
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let inputs = Inputs::load(&a.common)?;
    let plan = load_plan(&a.common, &a.plan)?;
    engine::check_plan(&inputs.spec, &plan)?;
    let model = TimeModel::analytic(&plan, &inputs.profile);
    let cfg = sim_config(&a.common);
    let strategy: StrategyKind = a.strategy.into();
    let prov = inputs
        .provenance(&a.common)
        .with("strategy", strategy)
        .with("prompt_len", a.common.prompt_len)
        .with("gen_len", a.common.gen_len)
        .with("batch", a.common.batch);

    let rows = simulator::compare_strategies(&plan, &model, &cfg).map_err(hetsplit::Error::Sim)?;
    let timeline = simulator::simulate_timeline(&plan, &model, strategy, &cfg).map_err(hetsplit::Error::Sim)?;
    let breakdown = simulator::utilization_breakdown(&timeline, simulator::default_warmup(&timeline))
        .map_err(hetsplit::Error::Sim)?;

    let out = &a.common.out;
    write(&out.join("timeline.csv"), &timeline.to_csv(&prov.csv_header()))?;
    write_json(
        &out.join("breakdown.json"),
        &Artifact {
            provenance: prov.clone(),
            body: BreakdownBody {
                strategy,
                makespan: timeline.makespan,
                normalization: NORMALIZATION.into(),
                breakdown,
            },
        },
    )?;
    write(&out.join("strategies.csv"), &strategies_csv(&prov.csv_header(), &rows)?)?;
    write_json(
        &out.join("strategies.json"),
        &Artifact {
            provenance: prov,
            body: StrategiesBody {
                normalization: NORMALIZATION.into(),
                strategies: rows.clone(),
            },
        },
    )?;
    for r in &rows {
        println!("{:>7}  makespan {:.6} s", r.strategy.name(), r.makespan);
    }
    Ok(())
}

#[derive(Serialize)]
struct StrategyCsvRow {
    strategy: &'static str,
    makespan: f64,
    cpu_busy: f64,
    pin_busy: f64,
    trans_busy: f64,
    gpu_busy: f64,
}

pub fn strategies_csv(header: &str, rows: &[StrategyRow]) -> Result<String> {
    let frac = |r: &StrategyRow, l: Lane| r.breakdown.fractions.get(&l).copied().unwrap_or(0.0);
    csv_with_header(
        header,
        rows.iter().map(|r| StrategyCsvRow {
            strategy: r.strategy.name(),
            makespan: r.makespan,
            cpu_busy: frac(r, Lane::Cpu),
            pin_busy: frac(r, Lane::Pin),
            trans_busy: frac(r, Lane::Trans),
            gpu_busy: frac(r, Lane::Gpu),
        }),
    )
}

pub fn run(a: &RunArgs) -> Result<()> {
    let inputs = Inputs::load(&a.common)?;
    let spec = &inputs.spec;
    let fp32_bytes = spec.model_bytes() / spec.dtype_bytes as u64 * 4;
    if fp32_bytes > ENGINE_WEIGHT_LIMIT {
        bail!(
            "model {} needs {fp32_bytes} bytes of fp32 weights; the desk engine is limited to {ENGINE_WEIGHT_LIMIT}",
            spec.name
        );
    }
    if a.common.batch != 1 {
        bail!("the engine runs batch 1 only");
    }
    let plan = load_plan(&a.common, &a.plan)?;
    let strategy: StrategyKind = a.strategy.into();
    let weights = ModelWeights::seeded(spec, a.common.seed);
    let report = engine::run_decode(
        spec,
        &plan,
        &weights,
        a.common.prompt_len,
        a.common.gen_len,
        &inputs.profile,
        strategy,
    )?;
    let model = TimeModel::analytic(&plan, &inputs.profile);
    let sim = simulator::simulate_timeline(&plan, &model, strategy, &sim_config(&a.common)).map_err(hetsplit::Error::Sim)?;
    let lane_utilization = measure_lane_utilization(&report).ok();

    let prov = inputs
        .provenance(&a.common)
        .with("strategy", strategy)
        .with("prompt_len", a.common.prompt_len)
        .with("gen_len", a.common.gen_len);
    let out = &a.common.out;
    write(&out.join("run_timeline.csv"), &report.timeline.to_csv(&prov.csv_header()))?;
    write(
        &out.join("param_trace.csv"),
        &trace::param_trace_csv(&report.param_trace, &prov.csv_header()),
    )?;
    println!(
        "{}: makespan {:.3} s (simulated {:.3} s), {:.2} tok/s, checksum {}",
        strategy.name(),
        report.makespan,
        sim.makespan,
        report.tokens_per_sec,
        report.checksum
    );
    for w in &report.warnings {
        tracing::warn!("{w}");
    }
    write_json(
        &out.join("run_report.json"),
        &Artifact {
            provenance: prov,
            body: RunBody {
                report,
                simulated_makespan: sim.makespan,
                lane_utilization,
            },
        },
    )?;
    Ok(())
}

#[derive(Serialize)]
struct SweepCsvRow {
    budget_bytes: u64,
    budget_fraction: f64,
    feasible: bool,
    gpu_bytes_used: u64,
    promoted_kinds: usize,
    makespan: f64,
    per_token_latency: f64,
    tokens_per_sec: f64,
}

impl From<&SweepRow> for SweepCsvRow {
    fn from(r: &SweepRow) -> Self {
        Self {
            budget_bytes: r.budget_bytes,
            budget_fraction: r.budget_fraction,
            feasible: r.feasible,
            gpu_bytes_used: r.gpu_bytes_used,
            promoted_kinds: r.promoted_kinds,
            makespan: r.makespan,
            per_token_latency: r.per_token_latency,
            tokens_per_sec: r.tokens_per_sec,
        }
    }
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let inputs = Inputs::load(&a.common)?;
    let cfg = solver(&a.solver)?;
    let curves_path = a.curves.clone().unwrap_or_else(|| a.common.out.join("curves.json"));
    let curves: Artifact<CurvesBody> = read_json(&curves_path)?;
    let budgets: Vec<u64> = a.budgets.iter().map(|b| b.resolve(&inputs.spec)).collect();
    let strategy: StrategyKind = a.strategy.into();
    let rows = pipeline::sweep(
        &inputs.spec,
        &inputs.profile,
        &curves.body.curves,
        &cfg,
        &budgets,
        &workload(&a.common),
        strategy,
    )?;
    let list: Vec<String> = a.budgets.iter().map(Budget::to_string).collect();
    let prov = inputs
        .provenance(&a.common)
        .with("strategy", strategy)
        .with("budgets", list.join(";"))
        .with("prompt_len", a.common.prompt_len)
        .with("gen_len", a.common.gen_len);
    let path = a.common.out.join("sweep.csv");
    write(&path, &csv_with_header(&prov.csv_header(), rows.iter().map(SweepCsvRow::from))?)?;
    let feasible = rows.iter().filter(|r| r.feasible).count();
    println!("{feasible} of {} budgets feasible -> {}", rows.len(), path.display());
    Ok(())
}
