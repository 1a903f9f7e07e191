//! Timeline and parameter-manager trace records shared by the simulator and
//! the engine, plus their CSV encodings.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::model::{ModuleGroup, ModuleId};

/// A serially used resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Lane {
    Cpu,
    Pin,
    Trans,
    Gpu,
}

impl Lane {
    pub const ALL: [Lane; 4] = [Lane::Cpu, Lane::Pin, Lane::Trans, Lane::Gpu];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Lane::Cpu => "CPU",
            Lane::Pin => "PIN",
            Lane::Trans => "TRANS",
            Lane::Gpu => "GPU",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Compute,
    Pin,
    Transfer,
    /// Host-side copy of a pageable weight into a bounce buffer.
    Stage,
    ActivationIn,
    ActivationOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub lane: Lane,
    pub module: ModuleId,
    /// Forward pass index; 0 is the first pass of the run.
    pub step: usize,
    pub kind: EventKind,
    pub start: f64,
    pub end: f64,
}

impl TimelineEvent {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timeline {
    pub events: Vec<TimelineEvent>,
    pub makespan: f64,
}

impl Timeline {
    pub fn from_events(events: Vec<TimelineEvent>) -> Self {
        let makespan = events.iter().map(|e| e.end).fold(0.0, f64::max);
        Self { events, makespan }
    }

    pub fn lane_events(&self, lane: Lane) -> impl Iterator<Item = &TimelineEvent> {
        self.events.iter().filter(move |e| e.lane == lane)
    }

    pub fn busy(&self, lane: Lane) -> f64 {
        self.lane_events(lane).map(TimelineEvent::duration).sum()
    }

    /// Pairs of events on one lane whose intervals intersect.
    pub fn lane_overlaps(&self, eps: f64) -> Vec<(TimelineEvent, TimelineEvent)> {
        let mut out = Vec::new();
        for lane in Lane::ALL {
            let mut evs: Vec<&TimelineEvent> = self.lane_events(lane).collect();
            evs.sort_by(|a, b| a.start.total_cmp(&b.start));
            for w in evs.windows(2) {
                if w[1].start < w[0].end - eps {
                    out.push((w[0].clone(), w[1].clone()));
                }
            }
        }
        out
    }

    /// `lane,module,start,end` rows, one per event.
    pub fn to_csv(&self, header: &str) -> String {
        let mut s = String::from(header);
        s.push_str("lane,module,step,kind,start,end\n");
        for e in &self.events {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.9},{:.9}",
                e.lane,
                e.module,
                e.step,
                serde_json::to_value(e.kind).unwrap().as_str().unwrap(),
                e.start,
                e.end
            );
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamEventKind {
    PinStart,
    PinEnd,
    Acquire,
    TransferStart,
    TransferEnd,
    Release,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTraceRecord {
    pub time: f64,
    pub group: ModuleGroup,
    pub module: ModuleId,
    pub event: ParamEventKind,
}

pub fn param_trace_csv(records: &[ParamTraceRecord], header: &str) -> String {
    let mut s = String::from(header);
    s.push_str("time,group,module,event\n");
    for r in records {
        let _ = writeln!(
            s,
            "{:.9},{:?},{},{}",
            r.time,
            r.group,
            r.module,
            serde_json::to_value(r.event).unwrap().as_str().unwrap()
        );
    }
    s
}
