//! Toy pre-LN transformer executed over four timed lanes.
//!
//! Split linears compute the weight columns `[k, out_dim)` on the CPU lane
//! while the GPU shard `[0, k)` is pinned, transferred and multiplied on the
//! emulated GPU. Results are concatenated by column, so every placement
//! produces bitwise identical activations.

pub mod backend;
pub mod kernels;
pub mod kv;
pub mod lanes;
pub mod weights;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::costmodel::DeviceProfile;
use crate::model::{ModelError, ModelSpec, ModuleGroup, ModuleId, ModuleKind};
use crate::paramstore::{self, ParamError, SharedParamManager};
use crate::planner::{self, PartitionDecision, Placement, PlacementPlan};
use crate::simulator::StrategyKind;
use crate::trace::{EventKind, Lane, ParamEventKind, ParamTraceRecord, Timeline};

use kernels::Mat;
use kv::{HeadTensor, KvCache};
use lanes::{JobTag, Lanes};
use weights::{Linear, ModelWeights};

pub use kv::kv_cache_append;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("insufficient data: {steps} decode steps, need at least {needed}")]
    InsufficientData { steps: usize, needed: usize },
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Upper bound on CPU worker threads.
pub const MAX_THREADS: usize = 16;

/// CPU worker threads for a profile, capped by `HETEGEN_THREADS` and [`MAX_THREADS`].
pub fn worker_threads(profile: &DeviceProfile) -> usize {
    let env_cap = std::env::var("HETEGEN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(MAX_THREADS);
    profile.cpu_threads.min(env_cap).min(MAX_THREADS).max(1)
}

/// Column split index for a GPU share `alpha`.
pub fn split_index(alpha: f64, out_dim: usize) -> usize {
    ((alpha * out_dim as f64).round().max(0.0) as usize).min(out_dim)
}

/// Pinned host copy of a linear's GPU columns `[0, columns)`, `in_dim x columns`.
#[derive(Debug, Clone)]
pub struct StagedShard {
    pub columns: usize,
    pub data: Arc<Vec<f32>>,
}

impl StagedShard {
    pub fn pin(linear: &Linear, columns: usize) -> Self {
        let mut data = vec![0.0; linear.in_dim * columns];
        kernels::gather_cols(&linear.weight, linear.in_dim, linear.out_dim, 0, columns, &mut data);
        Self {
            columns,
            data: Arc::new(data),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SplitOutput {
    pub y: Mat,
    pub split_index: usize,
    pub warning: Option<String>,
}

fn fallback_warning(module: &str, alpha: f64, k: usize, out_dim: usize) -> Option<String> {
    let device = if k == 0 {
        "cpu"
    } else if k == out_dim {
        "gpu"
    } else {
        return None;
    };
    let w = format!("{module}: alpha {alpha:.4} rounds to {k} of {out_dim} columns; running on {device} only");
    tracing::warn!("{w}");
    Some(w)
}

fn submit_cpu_part(lanes: &Lanes, x: &Arc<Mat>, lin: &Arc<Linear>, k: usize, bytes: f64, tag: Option<JobTag>) -> lanes::Pending<Mat> {
    let (x, lin) = (Arc::clone(x), Arc::clone(lin));
    lanes.submit(Lane::Cpu, bytes, tag, move |backend| {
        let mut y = Mat::zeros(x.rows, lin.out_dim - k);
        backend.install(|| {
            kernels::matmul_cols(&x.data, x.rows, x.cols, &lin.weight, lin.out_dim, k, lin.out_dim - k, &mut y.data)
        });
        y
    })
}

fn submit_gpu_part(lanes: &Lanes, x: &Arc<Mat>, device: Arc<Vec<f32>>, k: usize, bytes: f64, tag: Option<JobTag>) -> lanes::Pending<Mat> {
    let x = Arc::clone(x);
    lanes.submit(Lane::Gpu, bytes, tag, move |_| {
        let mut y = Mat::zeros(x.rows, k);
        kernels::matmul_cols(&x.data, x.rows, x.cols, &device, k, 0, k, &mut y.data);
        y
    })
}

fn join(gpu: Mat, cpu: Mat, bias: &[f32]) -> Mat {
    let mut y = Mat::hcat(&gpu, &cpu);
    kernels::add_bias(&mut y, bias);
    y
}

/// Split product of `x` with `linear`: the CPU lane computes columns
/// `[k, out_dim)` while the staged GPU shard is transferred and multiplied.
pub fn hetero_linear_forward(
    x: &Mat,
    linear: &Arc<Linear>,
    alpha: f64,
    lanes: &Lanes,
    staged: &StagedShard,
) -> Result<SplitOutput, EngineError> {
    if x.cols != linear.in_dim {
        return Err(EngineError::Shape(format!(
            "activation has {} columns, weight expects {}",
            x.cols, linear.in_dim
        )));
    }
    let k = split_index(alpha, linear.out_dim);
    if staged.columns != k || staged.data.len() != linear.in_dim * k {
        return Err(EngineError::Shape(format!(
            "staged shard holds {} columns, split needs {k}",
            staged.columns
        )));
    }
    let warning = fallback_warning("linear", alpha, k, linear.out_dim);
    let x = Arc::new(x.clone());
    let cpu = submit_cpu_part(lanes, &x, linear, k, 0.0, None);
    let shard = Arc::clone(&staged.data);
    let device = lanes.submit(Lane::Trans, 0.0, None, move |_| Arc::new((*shard).clone())).wait();
    let gpu = submit_gpu_part(lanes, &x, device, k, 0.0, None);
    Ok(SplitOutput {
        y: join(gpu.wait(), cpu.wait(), &linear.bias),
        split_index: k,
        warning,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub strategy: StrategyKind,
    pub prompt_len: usize,
    pub gen_len: usize,
    pub prefill_latency: f64,
    /// Seconds per decode step.
    pub per_token_latencies: Vec<f64>,
    pub per_token_ms: Vec<f64>,
    pub tokens_per_sec: f64,
    pub lane_busy: BTreeMap<Lane, f64>,
    /// Prefill plus decode, seconds.
    pub makespan: f64,
    /// Start of the first decode step, seconds.
    pub decode_start: f64,
    /// SHA-256 over the logits of every pass.
    pub checksum: String,
    pub generated_tokens: Vec<usize>,
    pub peak_gpu_bytes: u64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub final_logits: Vec<f32>,
    #[serde(skip)]
    pub timeline: Timeline,
    #[serde(skip)]
    pub param_trace: Vec<ParamTraceRecord>,
}

/// Decode steps needed before lane fractions are meaningful.
pub const MIN_UTILIZATION_STEPS: usize = 8;

/// Busy fraction per lane over the decode steps, prefill excluded.
pub fn measure_lane_utilization(report: &ExecutionReport) -> Result<BTreeMap<Lane, f64>, EngineError> {
    if report.gen_len < MIN_UTILIZATION_STEPS {
        return Err(EngineError::InsufficientData {
            steps: report.gen_len,
            needed: MIN_UTILIZATION_STEPS,
        });
    }
    let (lo, hi) = (report.decode_start, report.makespan);
    let span = hi - lo;
    let mut out = BTreeMap::new();
    for lane in Lane::ALL {
        let busy: f64 = report
            .timeline
            .lane_events(lane)
            .filter(|e| e.step >= 1)
            .map(|e| (e.end.min(hi) - e.start.max(lo)).max(0.0))
            .sum();
        out.insert(lane, if span > 0.0 { (busy / span).clamp(0.0, 1.0) } else { 0.0 });
    }
    Ok(out)
}

/// Deterministic prompt tokens for a seed.
pub fn prompt_tokens(spec: &ModelSpec, seed: u64, prompt_len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..prompt_len).map(|_| rng.random_range(0..spec.vocab_size)).collect()
}

/// Checks that a plan was built for `spec`.
pub fn check_plan(spec: &ModelSpec, plan: &PlacementPlan) -> Result<(), EngineError> {
    let modules = crate::model::enumerate_modules(spec);
    if modules.len() != plan.decisions.len() {
        return Err(EngineError::Config(format!(
            "plan has {} modules, model {} has {}",
            plan.decisions.len(),
            spec.name,
            modules.len()
        )));
    }
    for (m, d) in modules.iter().zip(&plan.decisions) {
        if *m != d.module {
            return Err(EngineError::Config(format!("plan module {} does not match the model", d.id())));
        }
    }
    let violations = planner::validate_plan(plan);
    if !violations.is_empty() {
        return Err(EngineError::Config(format!("plan is invalid: {violations:?}")));
    }
    Ok(())
}

/// One engine instance runs one decode session at a time.
pub struct Engine {
    profile: DeviceProfile,
    lanes: Lanes,
}

impl Engine {
    pub fn new(profile: &DeviceProfile) -> Self {
        Self {
            profile: profile.clone(),
            lanes: Lanes::new(profile, worker_threads(profile)),
        }
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }

    pub fn run_decode(
        &mut self,
        spec: &ModelSpec,
        plan: &PlacementPlan,
        weights: &ModelWeights,
        prompt_len: usize,
        gen_len: usize,
        strategy: StrategyKind,
    ) -> Result<ExecutionReport, EngineError> {
        spec.validate()?;
        check_plan(spec, plan)?;
        if prompt_len == 0 {
            return Err(EngineError::Config("prompt length must be at least 1".into()));
        }
        if prompt_len + gen_len > spec.max_positions {
            return Err(ModelError::SeqTooLong {
                seq_len: prompt_len + gen_len,
                max_positions: spec.max_positions,
            }
            .into());
        }
        let mut session = Session::new(&self.lanes, spec, plan, weights, strategy)?;
        session.cold_pins();
        self.lanes.recorder.reset();
        session.record_cold_pins();

        let mut hasher = Sha256::new();
        let prompt = prompt_tokens(spec, weights.seed, prompt_len);
        let mut logits = session.forward(0, &prompt, 0)?;
        hasher.update(bytes_of(&logits));
        let prefill_latency = self.lanes.recorder.now();
        let mut latencies = Vec::with_capacity(gen_len);
        let mut generated = Vec::with_capacity(gen_len);
        for step in 1..=gen_len {
            let t0 = self.lanes.recorder.now();
            let token = kernels::argmax(&logits);
            generated.push(token);
            logits = session.forward(step, &[token], prompt_len + step - 1)?;
            hasher.update(bytes_of(&logits));
            latencies.push(self.lanes.recorder.now() - t0);
        }
        let makespan = self.lanes.recorder.now();
        let timeline = Timeline {
            events: self.lanes.recorder.take_events(),
            makespan,
        };
        let lane_busy = Lane::ALL.iter().map(|&l| (l, timeline.busy(l))).collect();
        let decode_total: f64 = latencies.iter().sum();
        let peak_gpu_bytes = planner::gpu_bytes(&plan.decisions, 0)
            + session.kv.lock().unwrap().bytes()
            + 4 * (prompt_len * spec.ffn_dim.max(spec.hidden_dim)) as u64;
        Ok(ExecutionReport {
            strategy,
            prompt_len,
            gen_len,
            prefill_latency,
            per_token_ms: latencies.iter().map(|s| s * 1e3).collect(),
            tokens_per_sec: if decode_total > 0.0 { gen_len as f64 / decode_total } else { 0.0 },
            per_token_latencies: latencies,
            lane_busy,
            makespan,
            decode_start: prefill_latency,
            checksum: hex::encode(hasher.finalize()),
            generated_tokens: generated,
            peak_gpu_bytes,
            warnings: session.warnings,
            final_logits: logits,
            timeline,
            param_trace: self.lanes.recorder.take_params(),
        })
    }
}

/// Runs a decode session on a fresh engine.
pub fn run_decode(
    spec: &ModelSpec,
    plan: &PlacementPlan,
    weights: &ModelWeights,
    prompt_len: usize,
    gen_len: usize,
    profile: &DeviceProfile,
    strategy: StrategyKind,
) -> Result<ExecutionReport, EngineError> {
    Engine::new(profile).run_decode(spec, plan, weights, prompt_len, gen_len, strategy)
}

fn bytes_of(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|f| f.to_le_bytes()).collect()
}

type Buffers = Arc<Mutex<HashMap<(ModuleGroup, u8), Arc<Vec<f32>>>>>;

struct Session<'a> {
    lanes: &'a Lanes,
    spec: &'a ModelSpec,
    plan: &'a PlacementPlan,
    decisions: BTreeMap<ModuleId, &'a PartitionDecision>,
    weights: &'a ModelWeights,
    strategy: StrategyKind,
    params: Option<Arc<SharedParamManager>>,
    buffers: Buffers,
    kv: Arc<Mutex<KvCache>>,
    warnings: Vec<String>,
    cold: Vec<ModuleId>,
    step: usize,
}

impl<'a> Session<'a> {
    fn new(
        lanes: &'a Lanes,
        spec: &'a ModelSpec,
        plan: &'a PlacementPlan,
        weights: &'a ModelWeights,
        strategy: StrategyKind,
    ) -> Result<Self, EngineError> {
        let params = match strategy {
            StrategyKind::Hybrid => Some(Arc::new(SharedParamManager::new(paramstore::init_groups(plan)?))),
            _ => None,
        };
        let mut warnings = Vec::new();
        for d in plan.split_modules() {
            let k = d.split_columns();
            if let Some(w) = fallback_warning(&d.id().to_string(), d.alpha, k, d.module.out_dim) {
                warnings.push(w);
            }
        }
        Ok(Self {
            lanes,
            spec,
            plan,
            decisions: plan.decisions.iter().map(|d| (d.id(), d)).collect(),
            weights,
            strategy,
            params,
            buffers: Arc::default(),
            kv: Arc::new(Mutex::new(KvCache::new(spec.num_layers, 1, spec.num_heads, spec.head_dim()))),
            warnings,
            cold: Vec::new(),
            step: 0,
        })
    }

    /// Stages each group's first member before the clock starts.
    fn cold_pins(&mut self) {
        let Some(params) = &self.params else { return };
        for g in params.snapshot().groups() {
            for (module, buffer) in g.staged() {
                let d = self.decisions[&module];
                let shard = StagedShard::pin(self.weights.linear(module), d.split_columns());
                self.buffers.lock().unwrap().insert((g.group_id, buffer), shard.data);
                self.cold.push(module);
            }
        }
    }

    fn record_cold_pins(&self) {
        for &m in &self.cold {
            self.lanes.recorder.param(m, ParamEventKind::PinStart);
            self.lanes.recorder.param(m, ParamEventKind::PinEnd);
        }
    }

    fn tag(&self, module: ModuleId, kind: EventKind) -> Option<JobTag> {
        Some(JobTag {
            module,
            step: self.step,
            kind,
        })
    }

    /// Runs all modules for `tokens` at positions from `start_pos`; returns
    /// the logits of the last token.
    fn forward(&mut self, step: usize, tokens: &[usize], start_pos: usize) -> Result<Vec<f32>, EngineError> {
        self.step = step;
        let h_dim = self.spec.hidden_dim;
        let mut x = Arc::new(Mat::zeros(tokens.len(), h_dim));
        let mut normed = Arc::clone(&x);
        let (mut q, mut k) = (Arc::clone(&x), Arc::clone(&x));
        let mut attn = Arc::clone(&x);
        let mut hidden = Arc::clone(&x);
        for d in &self.plan.decisions {
            let id = d.id();
            match id.kind {
                ModuleKind::Embedding => {
                    let tokens = tokens.to_vec();
                    let (tok, pos) = (self.weights.tokens.clone(), self.weights.positions.clone());
                    let y = self.lanes.submit(Lane::Gpu, d.module.param_bytes as f64, self.tag(id, EventKind::Compute), move |_| {
                        let mut m = Mat::zeros(tokens.len(), h_dim);
                        for (r, &t) in tokens.iter().enumerate() {
                            let p = start_pos + r;
                            for (j, v) in m.row_mut(r).iter_mut().enumerate() {
                                *v = tok[t * h_dim + j] + pos[p * h_dim + j];
                            }
                        }
                        m
                    });
                    x = Arc::new(y.wait());
                }
                ModuleKind::AttnLayerNorm | ModuleKind::MlpLayerNorm => {
                    let norm = self.weights.norms[&id].clone();
                    let input = Arc::clone(&x);
                    let y = self.lanes.submit(Lane::Gpu, d.module.param_bytes as f64, self.tag(id, EventKind::Compute), move |_| {
                        kernels::layer_norm(&input, &norm.gamma, &norm.beta)
                    });
                    normed = Arc::new(y.wait());
                }
                ModuleKind::AttnQ => q = Arc::new(self.linear(d, &normed)?),
                ModuleKind::AttnK => k = Arc::new(self.linear(d, &normed)?),
                ModuleKind::AttnV => {
                    let v = self.linear(d, &normed)?;
                    let (kv, heads, layer) = (Arc::clone(&self.kv), self.spec.num_heads, id.layer);
                    let (q, k) = (Arc::clone(&q), Arc::clone(&k));
                    let out = self.lanes.submit(Lane::Gpu, 0.0, None, move |_| -> Result<Mat, EngineError> {
                        let mut cache = kv.lock().unwrap();
                        kv_cache_append(&mut cache, layer, &HeadTensor::from_mat(&k, 1, heads), &HeadTensor::from_mat(&v, 1, heads))?;
                        Ok(kv::attend(&cache, layer, &HeadTensor::from_mat(&q, 1, heads)).to_mat())
                    });
                    attn = Arc::new(out.wait()?);
                }
                ModuleKind::AttnOut | ModuleKind::MlpFc2 => {
                    let input = if id.kind == ModuleKind::AttnOut { &attn } else { &hidden };
                    let o = self.linear(d, input)?;
                    let mut next = (*x).clone();
                    kernels::add_assign(&mut next, &o);
                    x = Arc::new(next);
                }
                ModuleKind::MlpFc1 => {
                    let mut f = self.linear(d, &normed)?;
                    kernels::relu(&mut f);
                    hidden = Arc::new(f);
                }
            }
        }
        let (tok, vocab) = (self.weights.tokens.clone(), self.spec.vocab_size);
        let last = x.row(x.rows - 1).to_vec();
        let logits = self.lanes.submit(Lane::Gpu, 0.0, None, move |_| {
            let mut out = vec![0.0f32; vocab];
            kernels::matmul_cols(&last, 1, h_dim, &transpose(&tok, vocab, h_dim), vocab, 0, vocab, &mut out);
            out
        });
        Ok(logits.wait())
    }

    fn linear(&mut self, d: &PartitionDecision, x: &Arc<Mat>) -> Result<Mat, EngineError> {
        let lin = Arc::clone(self.weights.linear(d.id()));
        match (d.placement, self.strategy) {
            (Placement::GpuResident, _) => {
                let x = Arc::clone(x);
                let y = self.lanes.submit(Lane::Gpu, d.module.param_bytes as f64, self.tag(d.id(), EventKind::Compute), move |_| {
                    let mut y = kernels::dense(&x, &lin.weight, lin.out_dim);
                    kernels::add_bias(&mut y, &lin.bias);
                    y
                });
                Ok(y.wait())
            }
            (Placement::HeteroSplit, StrategyKind::Hybrid) => self.split_hybrid(d, lin, x),
            (Placement::HeteroSplit, StrategyKind::PinnedBlocking) => self.split_pinned(d, lin, x),
            (Placement::HeteroSplit, StrategyKind::Naive) => self.split_naive(d, lin, x),
        }
    }

    fn cpu_bytes(d: &PartitionDecision) -> f64 {
        (d.module.param_bytes - d.shard_bytes()) as f64
    }

    fn split_hybrid(&mut self, d: &PartitionDecision, lin: Arc<Linear>, x: &Arc<Mat>) -> Result<Mat, EngineError> {
        let id = d.id();
        let k = d.split_columns();
        let params = Arc::clone(self.params.as_ref().expect("hybrid sessions have a manager"));
        let rec = Arc::clone(&self.lanes.recorder);
        let (mut handle, pin) = params.acquire(id)?;
        rec.param(id, ParamEventKind::Acquire);

        // pin the group's next member into the other buffer
        let succ = pin.module_id;
        let succ_lin = Arc::clone(self.weights.linear(succ));
        let succ_k = self.decisions[&succ].split_columns();
        let pinned = {
            let (params, buffers, rec) = (Arc::clone(&params), Arc::clone(&self.buffers), Arc::clone(&rec));
            self.lanes.submit(Lane::Pin, pin.bytes as f64, self.tag(succ, EventKind::Pin), move |_| {
                rec.param(succ, ParamEventKind::PinStart);
                let shard = StagedShard::pin(&succ_lin, succ_k);
                buffers.lock().unwrap().insert((pin.group, pin.buffer_id), shard.data);
                rec.param(succ, ParamEventKind::PinEnd);
                params.complete_pin(&pin)
            })
        };

        let cpu = submit_cpu_part(self.lanes, x, &lin, k, Self::cpu_bytes(d), self.tag(id, EventKind::Compute));
        let staged = self.buffers.lock().unwrap()[&(handle.group, handle.buffer_id)].clone();
        let transferred = self.lanes.submit(Lane::Trans, handle.bytes as f64, self.tag(id, EventKind::Transfer), move |_| {
            params.begin_transfer(&mut handle)?;
            rec.param(id, ParamEventKind::TransferStart);
            let device = Arc::new((*staged).clone());
            rec.param(id, ParamEventKind::TransferEnd);
            params.release(&mut handle)?;
            rec.param(id, ParamEventKind::Release);
            Ok::<_, ParamError>(device)
        });
        let device = transferred.wait()?;
        pinned.wait()?;
        let gpu = submit_gpu_part(self.lanes, x, device, k, d.shard_bytes() as f64, self.tag(id, EventKind::Compute));
        Ok(join(gpu.wait(), cpu.wait(), &lin.bias))
    }

    fn split_pinned(&mut self, d: &PartitionDecision, lin: Arc<Linear>, x: &Arc<Mat>) -> Result<Mat, EngineError> {
        let id = d.id();
        let k = d.split_columns();
        let bytes = d.shard_bytes() as f64;
        let rec = Arc::clone(&self.lanes.recorder);
        let staged = {
            let (lin, rec) = (Arc::clone(&lin), Arc::clone(&rec));
            self.lanes.submit(Lane::Pin, bytes, self.tag(id, EventKind::Pin), move |_| {
                rec.param(id, ParamEventKind::PinStart);
                let s = StagedShard::pin(&lin, k);
                rec.param(id, ParamEventKind::PinEnd);
                s
            })
        }
        .wait();
        let cpu = submit_cpu_part(self.lanes, x, &lin, k, Self::cpu_bytes(d), self.tag(id, EventKind::Compute));
        let device = self
            .lanes
            .submit(Lane::Trans, bytes, self.tag(id, EventKind::Transfer), move |_| {
                rec.param(id, ParamEventKind::TransferStart);
                let device = Arc::new((*staged.data).clone());
                rec.param(id, ParamEventKind::TransferEnd);
                device
            })
            .wait();
        let gpu = submit_gpu_part(self.lanes, x, device, k, bytes, self.tag(id, EventKind::Compute));
        Ok(join(gpu.wait(), cpu.wait(), &lin.bias))
    }

    fn split_naive(&mut self, d: &PartitionDecision, lin: Arc<Linear>, x: &Arc<Mat>) -> Result<Mat, EngineError> {
        let id = d.id();
        let k = d.split_columns();
        let bytes = d.shard_bytes() as f64;
        let hop_in = self.lanes.submit(Lane::Trans, activation_bytes(x.rows, x.cols), self.tag(id, EventKind::ActivationIn), {
            let x = Arc::clone(x);
            move |_| Arc::new((*x).clone())
        });
        // the bounce-buffer copy runs on the CPU lane at the pin rate
        let stage_bytes = bytes * self.lanes.backend(Lane::Cpu).rate / self.lanes.backend(Lane::Pin).rate;
        let staged = {
            let lin = Arc::clone(&lin);
            self.lanes.submit(Lane::Cpu, stage_bytes, self.tag(id, EventKind::Stage), move |_| StagedShard::pin(&lin, k))
        };
        let host_x = hop_in.wait();
        let staged = staged.wait();
        let cpu = submit_cpu_part(self.lanes, &host_x, &lin, k, Self::cpu_bytes(d), self.tag(id, EventKind::Compute));
        let device = self
            .lanes
            .submit(Lane::Trans, bytes, self.tag(id, EventKind::Transfer), move |_| Arc::new((*staged.data).clone()))
            .wait();
        let gpu = submit_gpu_part(self.lanes, x, device, k, bytes, self.tag(id, EventKind::Compute));
        let cpu_y = cpu.wait();
        let back = Arc::new(cpu_y);
        let hop_out = self.lanes.submit(Lane::Trans, activation_bytes(back.rows, back.cols), self.tag(id, EventKind::ActivationOut), {
            let back = Arc::clone(&back);
            move |_| (*back).clone()
        });
        let cpu_y = hop_out.wait();
        Ok(join(gpu.wait(), cpu_y, &lin.bias))
    }
}

/// fp32 activation bytes moved by the naive strategy.
pub fn activation_bytes(rows: usize, cols: usize) -> f64 {
    (rows * cols * 4) as f64
}

fn transpose(m: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut t = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}
