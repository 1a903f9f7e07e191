//! Per-lane cost model over the split ratio α.
//!
//! α is the fraction of a linear's weight columns handled by the GPU shard.
//! The CPU computes the remaining `(1 - α)` share from host memory while the
//! GPU shard is pinned, transferred and computed on the device. Costs come
//! either from the analytic rate model or from timed runs of the engine's
//! kernels, are fitted with low-degree polynomials, and the balanced α is the
//! root of `F_cpu(α) = F_com(α)` inside a small window around a closed-form
//! seed, with `F_com = max(F_pin, F_trans)` taken pointwise.

use std::path::Path;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::backend::{DeviceBackend, DeviceKind};
use crate::engine::kernels;
use crate::model::{ModuleGroup, ModuleId, ModuleSpec};

/// Smallest and largest α the solver will return for a split module.
pub const ALPHA_MIN: f64 = 1e-3;
pub const ALPHA_MAX: f64 = 1.0 - 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error("rate `{0}` must be strictly positive, got {1}")]
    Domain(&'static str, f64),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("profile schema error: {0}")]
    Schema(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("fit error: {samples} samples cannot determine a degree-{degree} polynomial")]
    Underdetermined { samples: usize, degree: usize },
    #[error("fit quality error: {lane} residual {residual:.3e}s exceeds 20% of median sample {median:.3e}s")]
    Quality {
        lane: &'static str,
        residual: f64,
        median: f64,
    },
    #[error("invalid solver config: {0}")]
    Config(String),
}

/// Processing rates, all in bytes of parameters per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub v_cpu: f64,
    pub v_gpu: f64,
    pub v_trans: f64,
    pub v_pin: f64,
    pub cpu_threads: usize,
}

impl DeviceProfile {
    pub fn new(v_cpu: f64, v_gpu: f64, v_trans: f64, v_pin: f64) -> Self {
        Self {
            v_cpu,
            v_gpu,
            v_trans,
            v_pin,
            cpu_threads: 1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CostError> {
        let p: DeviceProfile =
            serde_json::from_str(text).map_err(|e| CostError::Schema(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CostError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CostError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        for (name, v) in [
            ("v_cpu", self.v_cpu),
            ("v_gpu", self.v_gpu),
            ("v_trans", self.v_trans),
            ("v_pin", self.v_pin),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(CostError::Domain(name, v));
            }
        }
        if self.cpu_threads == 0 {
            return Err(CostError::Argument("cpu_threads must be positive".into()));
        }
        Ok(())
    }

    /// Unusual but legal rate orderings, reported rather than rejected.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.v_gpu <= self.v_trans {
            w.push("v_gpu does not exceed v_trans".to_string());
        }
        if self.v_gpu <= self.v_cpu {
            w.push("v_gpu does not exceed v_cpu".to_string());
        }
        w
    }

    /// Effective host-to-device rate when pin and transfer overlap.
    pub fn v_com(&self) -> f64 {
        self.v_pin.min(self.v_trans)
    }

    /// Short stable digest of the profile, used in artifact provenance.
    pub fn digest(&self) -> String {
        let canon = serde_json::to_string(self).expect("profile serializes");
        hex::encode(Sha256::digest(canon.as_bytes()))[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlphaForm {
    /// Balances CPU time against transfer plus GPU compute.
    Exact,
    /// Drops the GPU compute term.
    Approx,
}

pub fn closed_form_alpha(
    v_cpu: f64,
    v_gpu: f64,
    v_com: f64,
    form: AlphaForm,
) -> Result<f64, CostError> {
    for (name, v) in [("v_cpu", v_cpu), ("v_gpu", v_gpu), ("v_com", v_com)] {
        if v.is_nan() || v <= 0.0 {
            return Err(CostError::Domain(name, v));
        }
    }
    // Written as reciprocals so infinite rates behave.
    Ok(match form {
        AlphaForm::Exact => 1.0 / (v_cpu / v_com + v_cpu / v_gpu + 1.0),
        AlphaForm::Approx => 1.0 / (v_cpu / v_com + 1.0),
    })
}

/// Seed α for a profile: the exact closed form with the pin/transfer bottleneck rate.
pub fn seed_alpha(profile: &DeviceProfile) -> Result<f64, CostError> {
    closed_form_alpha(profile.v_cpu, profile.v_gpu, profile.v_com(), AlphaForm::Exact)
        .map(|a| a.clamp(ALPHA_MIN, ALPHA_MAX))
}

/// Modules sharing a group and weight size share cost curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ShapeClass {
    pub group: ModuleGroup,
    pub param_bytes: u64,
}

impl ShapeClass {
    pub fn of(module: &ModuleSpec) -> Self {
        Self {
            group: module.group,
            param_bytes: module.param_bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSamples {
    pub class: ShapeClass,
    pub module_id: ModuleId,
    pub alphas: Vec<f64>,
    pub t_cpu: Vec<f64>,
    pub t_gpu: Vec<f64>,
    pub t_pin: Vec<f64>,
    pub t_trans: Vec<f64>,
}

impl CostSamples {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let n = self.alphas.len();
        if [&self.t_cpu, &self.t_gpu, &self.t_pin, &self.t_trans]
            .iter()
            .any(|v| v.len() != n)
        {
            return Err(CostError::Argument("sample lanes differ in length".into()));
        }
        let all = self
            .t_cpu
            .iter()
            .chain(&self.t_gpu)
            .chain(&self.t_pin)
            .chain(&self.t_trans);
        if all.clone().any(|t| !(*t >= 0.0)) {
            return Err(CostError::Argument("negative or NaN sample time".into()));
        }
        let non_increasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
        let non_decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0]);
        if !non_increasing(&self.t_cpu) {
            return Err(CostError::Argument("t_cpu must not increase with alpha".into()));
        }
        for (name, lane) in [("t_gpu", &self.t_gpu), ("t_pin", &self.t_pin), ("t_trans", &self.t_trans)] {
            if !non_decreasing(lane) {
                return Err(CostError::Argument(format!("{name} must not decrease with alpha")));
            }
        }
        Ok(())
    }
}

/// Serializes measured benchmarks. Hold one for the whole sampling run.
pub struct BenchSession {
    _guard: MutexGuard<'static, ()>,
}

static BENCH_LOCK: Mutex<()> = Mutex::new(());

impl BenchSession {
    pub fn acquire() -> Self {
        let guard = BENCH_LOCK.lock().unwrap_or_else(|p| p.into_inner());
        Self { _guard: guard }
    }
}

pub const MEASURE_WARMUPS: usize = 2;
pub const MEASURE_RUNS: usize = 5;

pub enum CostBackend<'a> {
    Analytic,
    /// Wall-clock runs of the engine's lane kernels; median of
    /// [`MEASURE_RUNS`] after [`MEASURE_WARMUPS`] warmups.
    Measured(&'a BenchSession),
}

/// Window of α values the benchmark visits around a seed.
pub fn alpha_grid(seed: f64, config: &SolverConfig) -> Vec<f64> {
    let lo = (seed - config.gamma).max(ALPHA_MIN);
    let hi = (seed + config.gamma).min(ALPHA_MAX);
    let steps = ((hi - lo) / config.lambda).floor() as usize;
    let mut grid: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * config.lambda).collect();
    if hi - grid.last().copied().unwrap_or(lo) > 1e-9 {
        grid.push(hi);
    }
    grid
}

pub fn sample_costs(
    module: &ModuleSpec,
    profile: &DeviceProfile,
    alphas: &[f64],
    backend: &CostBackend<'_>,
) -> Result<CostSamples, CostError> {
    if alphas.is_empty() {
        return Err(CostError::Argument("alphas must not be empty".into()));
    }
    if alphas.windows(2).any(|w| w[1] < w[0]) || alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(CostError::Argument("alphas must be sorted and within [0, 1]".into()));
    }
    profile.validate()?;
    let mut samples = CostSamples {
        class: ShapeClass::of(module),
        module_id: module.id,
        alphas: alphas.to_vec(),
        t_cpu: Vec::with_capacity(alphas.len()),
        t_gpu: Vec::with_capacity(alphas.len()),
        t_pin: Vec::with_capacity(alphas.len()),
        t_trans: Vec::with_capacity(alphas.len()),
    };
    match backend {
        CostBackend::Analytic => {
            let w = module.param_bytes as f64;
            for &a in alphas {
                samples.t_cpu.push((1.0 - a) * w / profile.v_cpu);
                samples.t_gpu.push(a * w / profile.v_gpu);
                samples.t_pin.push(a * w / profile.v_pin);
                samples.t_trans.push(a * w / profile.v_trans);
            }
        }
        CostBackend::Measured(_session) => {
            measure(module, profile, &mut samples);
            isotonic_non_increasing(&mut samples.t_cpu);
            isotonic_non_decreasing(&mut samples.t_gpu);
            isotonic_non_decreasing(&mut samples.t_pin);
            isotonic_non_decreasing(&mut samples.t_trans);
        }
    }
    Ok(samples)
}

fn measure(module: &ModuleSpec, profile: &DeviceProfile, samples: &mut CostSamples) {
    let (in_dim, out_dim) = (module.in_dim, module.out_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let weight: Vec<f32> = (0..in_dim * out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x: Vec<f32> = (0..in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let bytes_per_col = module.param_bytes as f64 / out_dim as f64;

    let threads = crate::engine::worker_threads(profile);
    let cpu = DeviceBackend::new(DeviceKind::HostCpu, profile.v_cpu, threads);
    let gpu = DeviceBackend::new(DeviceKind::EmulatedGpu, profile.v_gpu, 1);
    let pin = DeviceBackend::new(DeviceKind::HostCpu, profile.v_pin, 1);
    let trans = DeviceBackend::new(DeviceKind::EmulatedGpu, profile.v_trans, 1);

    for &alpha in &samples.alphas.clone() {
        let k = ((alpha * out_dim as f64).round() as usize).min(out_dim);
        let gpu_bytes = k as f64 * bytes_per_col;
        let cpu_bytes = (out_dim - k) as f64 * bytes_per_col;
        let mut staging = vec![0f32; in_dim * k];
        let mut device = vec![0f32; in_dim * k];
        let mut out = vec![0f32; out_dim];

        let t_cpu = median_timing(|| {
            cpu.run(cpu_bytes, || {
                cpu.install(|| kernels::matmul_cols(&x, 1, in_dim, &weight, out_dim, k, out_dim - k, &mut out[k..]))
            });
        });
        let t_pin = median_timing(|| {
            pin.run(gpu_bytes, || kernels::gather_cols(&weight, in_dim, out_dim, 0, k, &mut staging));
        });
        let t_trans = median_timing(|| {
            trans.run(gpu_bytes, || device.copy_from_slice(&staging));
        });
        let t_gpu = median_timing(|| {
            gpu.run(gpu_bytes, || kernels::matmul_cols(&x, 1, in_dim, &device, k, 0, k, &mut out[..k]));
        });
        samples.t_cpu.push(t_cpu);
        samples.t_pin.push(t_pin);
        samples.t_trans.push(t_trans);
        samples.t_gpu.push(t_gpu);
    }
}

fn median_timing(mut f: impl FnMut()) -> f64 {
    for _ in 0..MEASURE_WARMUPS {
        f();
    }
    let mut runs: Vec<f64> = (0..MEASURE_RUNS)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .collect();
    median(&mut runs)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Pool-adjacent-violators projection onto non-decreasing sequences.
fn isotonic_non_decreasing(values: &mut [f64]) {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values.iter() {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let n = n1 + n2;
            blocks.push(((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n));
        }
    }
    let mut i = 0;
    for (mean, n) in blocks {
        values[i..i + n].fill(mean);
        i += n;
    }
}

fn isotonic_non_increasing(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = -*v);
    isotonic_non_decreasing(values);
    values.iter_mut().for_each(|v| *v = -*v);
}

/// Polynomial with ascending-power coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn fit(xs: &[f64], ys: &[f64], degree: usize) -> Result<Self, CostError> {
        let n = xs.len();
        if n < degree + 1 {
            return Err(CostError::Underdetermined {
                samples: n,
                degree,
            });
        }
        let a = DMatrix::from_fn(n, degree + 1, |r, c| xs[r].powi(c as i32));
        let b = DVector::from_column_slice(ys);
        let coeffs = a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| CostError::Argument(format!("least squares failed: {e}")))?;
        Ok(Poly(coeffs.iter().copied().collect()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurves {
    pub class: ShapeClass,
    pub module_id: ModuleId,
    pub f_cpu: Poly,
    pub f_gpu: Poly,
    pub f_pin: Poly,
    pub f_trans: Poly,
    /// Largest absolute residual over all lanes, seconds.
    pub fit_residual: f64,
}

impl CostCurves {
    pub fn cpu(&self, alpha: f64) -> f64 {
        self.f_cpu.eval(alpha)
    }
    pub fn gpu(&self, alpha: f64) -> f64 {
        self.f_gpu.eval(alpha)
    }
    pub fn pin(&self, alpha: f64) -> f64 {
        self.f_pin.eval(alpha)
    }
    pub fn trans(&self, alpha: f64) -> f64 {
        self.f_trans.eval(alpha)
    }
    pub fn com(&self, alpha: f64) -> f64 {
        self.pin(alpha).max(self.trans(alpha))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Half-width of the refinement window around the seed.
    pub gamma: f64,
    /// Grid step inside the window.
    pub lambda: f64,
    pub degree: usize,
    pub tolerance: f64,
    /// Balance CPU time against `F_com + F_gpu` instead of `F_com` alone.
    #[serde(default)]
    pub include_gpu: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            lambda: 0.02,
            degree: 2,
            tolerance: 1e-3,
            include_gpu: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), CostError> {
        if !(0.0 < self.lambda && self.lambda <= self.gamma && self.gamma < 0.5) {
            return Err(CostError::Config(format!(
                "need 0 < lambda <= gamma < 0.5, got lambda={} gamma={}",
                self.lambda, self.gamma
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(CostError::Config("tolerance must be positive".into()));
        }
        if self.degree == 0 {
            return Err(CostError::Config("degree must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn fit_curves(samples: &CostSamples, config: &SolverConfig) -> Result<CostCurves, CostError> {
    config.validate()?;
    samples.validate()?;
    let xs = &samples.alphas;
    let scale = samples
        .t_cpu
        .iter()
        .chain(&samples.t_gpu)
        .chain(&samples.t_pin)
        .chain(&samples.t_trans)
        .fold(0.0f64, |m, v| m.max(*v));
    let mut worst = 0.0f64;
    let mut fit_lane = |lane: &'static str, ys: &[f64]| -> Result<Poly, CostError> {
        let poly = Poly::fit(xs, ys, config.degree)?;
        let residual = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (poly.eval(*x) - y).abs())
            .fold(0.0f64, f64::max);
        let median = median(&mut ys.to_vec());
        if residual > 0.2 * median && residual > 1e-12 * scale {
            return Err(CostError::Quality {
                lane,
                residual,
                median,
            });
        }
        worst = worst.max(residual);
        Ok(poly)
    };
    let f_cpu = fit_lane("cpu", &samples.t_cpu)?;
    let f_gpu = fit_lane("gpu", &samples.t_gpu)?;
    let f_pin = fit_lane("pin", &samples.t_pin)?;
    let f_trans = fit_lane("trans", &samples.t_trans)?;
    Ok(CostCurves {
        class: samples.class,
        module_id: samples.module_id,
        f_cpu,
        f_gpu,
        f_pin,
        f_trans,
        fit_residual: worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSolution {
    pub alpha: f64,
    pub window: (f64, f64),
    /// True when the balance point was bracketed inside the window.
    pub bracketed: bool,
    pub warning: Option<String>,
}

pub fn solve_alpha(
    curves: &CostCurves,
    seed_alpha: f64,
    config: &SolverConfig,
) -> Result<AlphaSolution, CostError> {
    config.validate()?;
    if !(seed_alpha > 0.0 && seed_alpha < 1.0) {
        return Err(CostError::Argument(format!("seed alpha {seed_alpha} not in (0, 1)")));
    }
    let com = |a: f64| {
        let c = curves.com(a);
        if config.include_gpu {
            c + curves.gpu(a)
        } else {
            c
        }
    };
    let diff = |a: f64| curves.cpu(a) - com(a);
    let scale = |a: f64| curves.cpu(a).abs().max(com(a).abs());

    let lo = (seed_alpha - config.gamma).max(ALPHA_MIN);
    let hi = (seed_alpha + config.gamma).min(ALPHA_MAX);
    let window = (lo, hi);

    let d_seed = diff(seed_alpha);
    if d_seed == 0.0 || d_seed.abs() <= 1e-12 * scale(seed_alpha) {
        return Ok(AlphaSolution {
            alpha: seed_alpha,
            window,
            bracketed: true,
            warning: None,
        });
    }

    let grid = alpha_grid(seed_alpha, config);
    let values: Vec<f64> = grid.iter().map(|&a| diff(a)).collect();
    // Brackets closest to the seed win.
    let bracket = grid
        .windows(2)
        .zip(values.windows(2))
        .filter(|(_, d)| d[0] == 0.0 || d[0].signum() != d[1].signum())
        .map(|(a, d)| (a[0], a[1], d[0]))
        .min_by(|x, y| {
            let dx = (0.5 * (x.0 + x.1) - seed_alpha).abs();
            let dy = (0.5 * (y.0 + y.1) - seed_alpha).abs();
            dx.total_cmp(&dy)
        });

    let Some((mut a, mut b, mut d_a)) = bracket else {
        let (alpha, _) = grid
            .iter()
            .zip(&values)
            .map(|(a, d)| (*a, d.abs()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("window is non-empty");
        let lane = if values[0] > 0.0 { "cpu" } else { "communication" };
        let warning = format!(
            "no balance point in [{lo:.4}, {hi:.4}]: {lane} lane dominates; using {alpha:.4}"
        );
        tracing::warn!("{warning}");
        return Ok(AlphaSolution {
            alpha,
            window,
            bracketed: false,
            warning: Some(warning),
        });
    };

    if d_a == 0.0 {
        return Ok(AlphaSolution {
            alpha: a,
            window,
            bracketed: true,
            warning: None,
        });
    }
    let mut mid = 0.5 * (a + b);
    for _ in 0..200 {
        mid = 0.5 * (a + b);
        let d_mid = diff(mid);
        if d_mid == 0.0 || d_mid.abs() <= 1e-3 * config.tolerance * scale(mid) || b - a < 1e-14 {
            break;
        }
        if d_mid.signum() == d_a.signum() {
            a = mid;
            d_a = d_mid;
        } else {
            b = mid;
        }
    }
    Ok(AlphaSolution {
        alpha: mid,
        window,
        bracketed: true,
        warning: None,
    })
}
