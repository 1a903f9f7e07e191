//! Four lane worker threads, each owning a device backend and a FIFO job queue.

use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use super::backend::{DeviceBackend, DeviceKind};
use crate::costmodel::DeviceProfile;
use crate::model::ModuleId;
use crate::trace::{EventKind, Lane, ParamEventKind, ParamTraceRecord, TimelineEvent};

type Job = Box<dyn FnOnce() + Send>;

/// Result of a job submitted to a lane.
pub struct Pending<T>(mpsc::Receiver<T>);

impl<T> Pending<T> {
    pub fn wait(self) -> T {
        self.0.recv().expect("lane worker exited before finishing a job")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JobTag {
    pub module: ModuleId,
    pub step: usize,
    pub kind: EventKind,
}

/// Collects timeline events and parameter-manager records against one epoch.
pub struct Recorder {
    epoch: Mutex<Instant>,
    events: Mutex<Vec<TimelineEvent>>,
    params: Mutex<Vec<ParamTraceRecord>>,
}

impl Recorder {
    pub fn new() -> Self {
        Self {
            epoch: Mutex::new(Instant::now()),
            events: Mutex::new(Vec::new()),
            params: Mutex::new(Vec::new()),
        }
    }

    /// Restarts the clock and drops everything recorded so far.
    pub fn reset(&self) {
        *self.epoch.lock().unwrap() = Instant::now();
        self.events.lock().unwrap().clear();
        self.params.lock().unwrap().clear();
    }

    pub fn now(&self) -> f64 {
        self.epoch.lock().unwrap().elapsed().as_secs_f64()
    }

    pub fn seconds(&self, t: Instant) -> f64 {
        let epoch = *self.epoch.lock().unwrap();
        t.saturating_duration_since(epoch).as_secs_f64()
    }

    pub fn event(&self, lane: Lane, tag: JobTag, start: Instant, end: Instant) {
        let ev = TimelineEvent {
            lane,
            module: tag.module,
            step: tag.step,
            kind: tag.kind,
            start: self.seconds(start),
            end: self.seconds(end),
        };
        self.events.lock().unwrap().push(ev);
    }

    pub fn param(&self, module: ModuleId, event: ParamEventKind) {
        let rec = ParamTraceRecord {
            time: self.now(),
            group: module.kind.group(),
            module,
            event,
        };
        self.params.lock().unwrap().push(rec);
    }

    pub fn take_events(&self) -> Vec<TimelineEvent> {
        let mut v = std::mem::take(&mut *self.events.lock().unwrap());
        v.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.lane.cmp(&b.lane)));
        v
    }

    pub fn take_params(&self) -> Vec<ParamTraceRecord> {
        std::mem::take(&mut *self.params.lock().unwrap())
    }
}

impl Default for Recorder {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Lanes {
    senders: Vec<mpsc::Sender<Job>>,
    workers: Vec<JoinHandle<()>>,
    backends: Vec<Arc<DeviceBackend>>,
    pub recorder: Arc<Recorder>,
}

impl Lanes {
    /// Lanes paced by the profile's rates; `cpu_threads` sizes the CPU pool.
    pub fn new(profile: &DeviceProfile, cpu_threads: usize) -> Self {
        Self::with_rates(
            [profile.v_cpu, profile.v_pin, profile.v_trans, profile.v_gpu],
            cpu_threads,
        )
    }

    /// Lanes with no emulated delay.
    pub fn unthrottled(cpu_threads: usize) -> Self {
        Self::with_rates([f64::INFINITY; 4], cpu_threads)
    }

    fn with_rates(rates: [f64; 4], cpu_threads: usize) -> Self {
        let recorder = Arc::new(Recorder::new());
        let mut senders = Vec::new();
        let mut workers = Vec::new();
        let mut backends = Vec::new();
        for lane in Lane::ALL {
            let (kind, threads) = match lane {
                Lane::Cpu => (DeviceKind::HostCpu, cpu_threads),
                Lane::Pin => (DeviceKind::HostCpu, 1),
                Lane::Trans | Lane::Gpu => (DeviceKind::EmulatedGpu, 1),
            };
            backends.push(Arc::new(DeviceBackend::new(kind, rates[lane.index()], threads)));
            let (tx, rx) = mpsc::channel::<Job>();
            senders.push(tx);
            workers.push(
                std::thread::Builder::new()
                    .name(format!("lane-{lane}").to_lowercase())
                    .spawn(move || {
                        for job in rx {
                            job();
                        }
                    })
                    .expect("spawn lane worker"),
            );
        }
        Self {
            senders,
            workers,
            backends,
            recorder,
        }
    }

    pub fn backend(&self, lane: Lane) -> &Arc<DeviceBackend> {
        &self.backends[lane.index()]
    }

    /// Queues `work` on `lane`. The job occupies the lane for at least
    /// `bytes / rate`; tagged jobs are recorded in the timeline.
    pub fn submit<T, F>(&self, lane: Lane, bytes: f64, tag: Option<JobTag>, work: F) -> Pending<T>
    where
        T: Send + 'static,
        F: FnOnce(&DeviceBackend) -> T + Send + 'static,
    {
        let (tx, rx) = mpsc::sync_channel(1);
        let backend = Arc::clone(&self.backends[lane.index()]);
        let recorder = Arc::clone(&self.recorder);
        let job: Job = Box::new(move || {
            let start = Instant::now();
            let out = backend.run(bytes, || work(&backend));
            if let Some(tag) = tag {
                recorder.event(lane, tag, start, Instant::now());
            }
            let _ = tx.send(out);
        });
        self.senders[lane.index()].send(job).expect("lane worker alive");
        Pending(rx)
    }
}

impl Drop for Lanes {
    fn drop(&mut self) {
        self.senders.clear();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
