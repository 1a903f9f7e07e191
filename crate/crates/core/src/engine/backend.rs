//! Device backends. Both compute on the host; completion is delayed until
//! `bytes / rate` has elapsed so the timing structure matches the rate model.

use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceKind {
    HostCpu,
    EmulatedGpu,
}

pub struct DeviceBackend {
    pub kind: DeviceKind,
    /// Bytes per second; infinite disables padding.
    pub rate: f64,
    pool: rayon::ThreadPool,
}

impl DeviceBackend {
    pub fn new(kind: DeviceKind, rate: f64, threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .thread_name(move |i| format!("{kind:?}-{i}").to_lowercase())
            .build()
            .expect("thread pool");
        Self { kind, rate, pool }
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }

    pub fn duration_for(&self, bytes: f64) -> Duration {
        if !(self.rate.is_finite()) || bytes <= 0.0 {
            return Duration::ZERO;
        }
        Duration::from_secs_f64(bytes / self.rate)
    }

    /// Runs `work`, then waits until the emulated duration has passed.
    pub fn run<R>(&self, bytes: f64, work: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = work();
        pad_until(start + self.duration_for(bytes));
        out
    }

    /// Runs `work` inside this backend's worker pool.
    pub fn install<R: Send>(&self, work: impl FnOnce() -> R + Send) -> R {
        self.pool.install(work)
    }
}

pub(crate) fn pad_until(deadline: Instant) {
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        std::thread::sleep(deadline - now);
    }
}
