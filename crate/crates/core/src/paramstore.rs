//! Rotating pinned staging buffers for split linears.
//!
//! Split modules are grouped by family (attention linears, MLP linears). Each
//! group owns two host staging buffers. Acquiring a module's staged shard
//! starts pinning the group's next member into the other buffer, so at most
//! one pinned shard per group waits for use at any time.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::model::{ModuleGroup, ModuleId};
use crate::planner::PlacementPlan;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("sequencing error in {group:?}: expected {expected}, got {got}")]
    Sequencing {
        group: ModuleGroup,
        expected: ModuleId,
        got: ModuleId,
    },
    #[error("lifecycle error for {module}: {reason}")]
    Lifecycle { module: ModuleId, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HandleState {
    Pinning,
    Ready,
    Transferring,
    Released,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PinnedHandle {
    pub module_id: ModuleId,
    pub group: ModuleGroup,
    pub buffer_id: u8,
    pub bytes: u64,
    pub state: HandleState,
    serial: u64,
}

/// Pin work the caller must carry out, then report with `complete_pin`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PinRequest {
    pub module_id: ModuleId,
    pub group: ModuleGroup,
    pub buffer_id: u8,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Acquire {
    Granted { handle: PinnedHandle, pin: PinRequest },
    /// The staged shard is still being pinned.
    Pending,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Entry {
    module: ModuleId,
    buffer: u8,
    state: HandleState,
    acquired: bool,
    serial: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParamGroup {
    pub group_id: ModuleGroup,
    /// Execution order; the member after the last is the first.
    pub member_order: Vec<ModuleId>,
    /// Shard bytes per member, in `member_order`.
    pub member_bytes: Vec<u64>,
    /// Staging buffer capacity, the largest member shard.
    pub shard_bytes: u64,
    cursor: usize,
    live: Vec<Entry>,
}

impl ParamGroup {
    /// Pinned shards not yet handed out, as `(module, buffer)`.
    pub fn staged(&self) -> Vec<(ModuleId, u8)> {
        self.live
            .iter()
            .filter(|e| !e.acquired)
            .map(|e| (e.module, e.buffer))
            .collect()
    }

    pub fn allocated_buffers(&self) -> usize {
        self.live.len()
    }

    pub fn next_member(&self) -> ModuleId {
        self.member_order[self.cursor]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ParamManager {
    groups: Vec<ParamGroup>,
    next_serial: u64,
}

impl ParamManager {
    /// Builds groups from explicit member lists, all with the same shard
    /// size, and pre-stages each group's first member as ready.
    pub fn new(groups: Vec<(ModuleGroup, Vec<ModuleId>, u64)>) -> Result<Self, ParamError> {
        Self::with_sizes(
            groups
                .into_iter()
                .map(|(g, members, bytes)| (g, members.into_iter().map(|m| (m, bytes)).collect()))
                .collect(),
        )
    }

    pub fn with_sizes(groups: Vec<(ModuleGroup, Vec<(ModuleId, u64)>)>) -> Result<Self, ParamError> {
        let mut out = Vec::new();
        for (group_id, sized) in groups {
            let members: Vec<ModuleId> = sized.iter().map(|(m, _)| *m).collect();
            let member_bytes: Vec<u64> = sized.iter().map(|(_, b)| *b).collect();
            let shard_bytes = member_bytes.iter().copied().max().unwrap_or(0);
            if group_id == ModuleGroup::NonLinear {
                return Err(ParamError::Config("non-linear modules are never staged".into()));
            }
            if members.is_empty() {
                continue;
            }
            let mut sorted = members.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != members.len() {
                return Err(ParamError::Config(format!("duplicate members in {group_id:?}")));
            }
            out.push(ParamGroup {
                group_id,
                live: vec![Entry {
                    module: members[0],
                    buffer: 0,
                    state: HandleState::Ready,
                    acquired: false,
                    serial: 0,
                }],
                member_order: members,
                member_bytes,
                shard_bytes,
                cursor: 0,
            });
        }
        Ok(Self {
            groups: out,
            next_serial: 1,
        })
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn group(&self, id: ModuleGroup) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.group_id == id)
    }

    fn group_of(&mut self, module: ModuleId) -> Result<&mut ParamGroup, ParamError> {
        self.groups
            .iter_mut()
            .find(|g| g.member_order.contains(&module))
            .ok_or_else(|| ParamError::Config(format!("module {module} is not a split module")))
    }

    pub fn acquire(&mut self, module: ModuleId) -> Result<Acquire, ParamError> {
        let serial = self.next_serial;
        let g = self.group_of(module)?;
        let expected = g.next_member();
        if module != expected {
            return Err(ParamError::Sequencing {
                group: g.group_id,
                expected,
                got: module,
            });
        }
        if g.live.iter().any(|e| e.acquired) {
            return Err(ParamError::Lifecycle {
                module,
                reason: "the group's previous handle has not been released".into(),
            });
        }
        let idx = g
            .live
            .iter()
            .position(|e| e.module == module && !e.acquired)
            .ok_or_else(|| ParamError::Lifecycle {
                module,
                reason: "nothing staged for this module".into(),
            })?;
        if g.live[idx].state == HandleState::Pinning {
            return Ok(Acquire::Pending);
        }
        let e = &mut g.live[idx];
        e.acquired = true;
        e.serial = serial;
        let handle = PinnedHandle {
            module_id: module,
            group: g.group_id,
            buffer_id: e.buffer,
            bytes: g.member_bytes[g.cursor],
            state: e.state,
            serial,
        };
        g.cursor = (g.cursor + 1) % g.member_order.len();
        let pin = PinRequest {
            module_id: g.next_member(),
            group: g.group_id,
            buffer_id: 1 - handle.buffer_id,
            bytes: g.member_bytes[g.cursor],
        };
        g.live.push(Entry {
            module: pin.module_id,
            buffer: pin.buffer_id,
            state: HandleState::Pinning,
            acquired: false,
            serial: 0,
        });
        self.next_serial += 1;
        Ok(Acquire::Granted { handle, pin })
    }

    pub fn complete_pin(&mut self, pin: &PinRequest) -> Result<(), ParamError> {
        let g = self.group_of(pin.module_id)?;
        let e = g
            .live
            .iter_mut()
            .find(|e| e.module == pin.module_id && e.buffer == pin.buffer_id && e.state == HandleState::Pinning)
            .ok_or_else(|| ParamError::Lifecycle {
                module: pin.module_id,
                reason: "no pin in flight for this buffer".into(),
            })?;
        e.state = HandleState::Ready;
        Ok(())
    }

    pub fn begin_transfer(&mut self, handle: &mut PinnedHandle) -> Result<(), ParamError> {
        let g = self.group_of(handle.module_id)?;
        let e = g
            .live
            .iter_mut()
            .find(|e| e.acquired && e.serial == handle.serial)
            .ok_or_else(|| ParamError::Lifecycle {
                module: handle.module_id,
                reason: "handle is not in use".into(),
            })?;
        if e.state != HandleState::Ready {
            return Err(ParamError::Lifecycle {
                module: handle.module_id,
                reason: format!("cannot transfer from state {:?}", e.state),
            });
        }
        e.state = HandleState::Transferring;
        handle.state = HandleState::Transferring;
        Ok(())
    }

    pub fn release(&mut self, handle: &mut PinnedHandle) -> Result<(), ParamError> {
        let g = self.group_of(handle.module_id)?;
        let idx = g
            .live
            .iter()
            .position(|e| e.acquired && e.serial == handle.serial)
            .ok_or_else(|| ParamError::Lifecycle {
                module: handle.module_id,
                reason: "handle already released".into(),
            })?;
        g.live.remove(idx);
        handle.state = HandleState::Released;
        Ok(())
    }

    /// At most one staged shard and two buffers per group, on distinct buffers.
    pub fn check_invariants(&self) -> Result<(), String> {
        for g in &self.groups {
            let staged = g.staged().len();
            if staged > 1 {
                return Err(format!("{:?} has {staged} staged shards", g.group_id));
            }
            if g.live.len() > 2 {
                return Err(format!("{:?} holds {} buffers", g.group_id, g.live.len()));
            }
            if g.live.len() == 2 && g.live[0].buffer == g.live[1].buffer {
                return Err(format!("{:?} reuses buffer {}", g.group_id, g.live[0].buffer));
            }
            if g.live.iter().filter(|e| e.acquired).count() > 1 {
                return Err(format!("{:?} has two handles in use", g.group_id));
            }
        }
        Ok(())
    }
}

/// Groups the plan's split modules and pre-stages the first of each group.
///
/// Shards in a group may differ by less than one weight column, which is
/// what rounding α to whole columns produces for equal-sized weights of
/// different aspect; larger differences are a configuration error.
pub fn init_groups(plan: &PlacementPlan) -> Result<ParamManager, ParamError> {
    let mut members: BTreeMap<ModuleGroup, Vec<(ModuleId, u64, u64)>> = BTreeMap::new();
    for d in plan.split_modules() {
        if !d.module.is_linear() {
            return Err(ParamError::Config(format!("non-linear module {} is split", d.id())));
        }
        let column = d.module.param_bytes / d.module.out_dim.max(1) as u64;
        members
            .entry(d.module.group)
            .or_default()
            .push((d.id(), d.shard_bytes(), column));
    }
    let mut groups = Vec::new();
    for (group, list) in members {
        let slack = list.iter().map(|m| m.2).max().unwrap_or(0);
        let lo = list.iter().min_by_key(|m| m.1).expect("non-empty group");
        let hi = list.iter().max_by_key(|m| m.1).expect("non-empty group");
        if hi.1 - lo.1 > slack {
            return Err(ParamError::Config(format!(
                "{group:?} shard sizes differ: {} has {} bytes, {} has {}",
                hi.0, hi.1, lo.0, lo.1
            )));
        }
        groups.push((group, list.into_iter().map(|(id, b, _)| (id, b)).collect()));
    }
    ParamManager::with_sizes(groups)
}

/// Blocking, thread-safe wrapper used by the engine.
pub struct SharedParamManager {
    inner: Mutex<ParamManager>,
    ready: Condvar,
}

impl SharedParamManager {
    pub fn new(manager: ParamManager) -> Self {
        Self {
            inner: Mutex::new(manager),
            ready: Condvar::new(),
        }
    }

    /// Waits while the staged shard is still pinning.
    pub fn acquire(&self, module: ModuleId) -> Result<(PinnedHandle, PinRequest), ParamError> {
        let mut m = self.inner.lock().unwrap();
        loop {
            match m.acquire(module)? {
                Acquire::Granted { handle, pin } => return Ok((handle, pin)),
                Acquire::Pending => m = self.ready.wait(m).unwrap(),
            }
        }
    }

    pub fn complete_pin(&self, pin: &PinRequest) -> Result<(), ParamError> {
        let r = self.inner.lock().unwrap().complete_pin(pin);
        self.ready.notify_all();
        r
    }

    pub fn begin_transfer(&self, handle: &mut PinnedHandle) -> Result<(), ParamError> {
        self.inner.lock().unwrap().begin_transfer(handle)
    }

    pub fn release(&self, handle: &mut PinnedHandle) -> Result<(), ParamError> {
        let r = self.inner.lock().unwrap().release(handle);
        self.ready.notify_all();
        r
    }

    pub fn snapshot(&self) -> ParamManager {
        self.inner.lock().unwrap().clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exploration {
    pub states: usize,
    /// Distinct complete schedules of driver, transfer and pin actions.
    pub interleavings: u128,
    pub max_staged: usize,
    pub max_buffers: usize,
    pub deadlocks: usize,
    pub violations: Vec<String>,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct World {
    manager: ParamManager,
    pc: usize,
    transfers: VecDeque<PinnedHandle>,
    pins: VecDeque<PinRequest>,
}

/// Explores every interleaving of three actors over `passes` visits of the
/// split modules: the decode driver acquiring in order, a transfer lane that
/// transfers and releases handles FIFO, and a pin lane completing pins FIFO.
pub fn explore(manager: &ParamManager, passes: usize) -> Exploration {
    let mut order: Vec<ModuleId> = manager.groups.iter().flat_map(|g| g.member_order.clone()).collect();
    order.sort();
    let schedule: Vec<ModuleId> = (0..passes).flat_map(|_| order.clone()).collect();

    let mut report = Exploration {
        states: 0,
        interleavings: 0,
        max_staged: 0,
        max_buffers: 0,
        deadlocks: 0,
        violations: Vec::new(),
    };
    let mut memo: HashMap<World, u128> = HashMap::new();
    let start = World {
        manager: manager.clone(),
        pc: 0,
        transfers: VecDeque::new(),
        pins: VecDeque::new(),
    };
    report.interleavings = count_paths(start, &schedule, &mut memo, &mut report);
    report.states = memo.len();
    report
}

fn successors(w: &World, schedule: &[ModuleId]) -> Vec<World> {
    let mut next = Vec::new();
    if w.pc < schedule.len() {
        let mut m = w.manager.clone();
        if let Ok(Acquire::Granted { handle, pin }) = m.acquire(schedule[w.pc]) {
            let mut n = w.clone();
            n.manager = m;
            n.pc += 1;
            n.transfers.push_back(handle);
            n.pins.push_back(pin);
            next.push(n);
        }
    }
    if let Some(front) = w.transfers.front() {
        let mut n = w.clone();
        let mut h = front.clone();
        let ok = if h.state == HandleState::Ready {
            n.manager.begin_transfer(&mut h).is_ok()
        } else {
            n.manager.release(&mut h).is_ok()
        };
        if ok {
            if h.state == HandleState::Released {
                n.transfers.pop_front();
            } else {
                n.transfers[0] = h;
            }
            next.push(n);
        }
    }
    if let Some(pin) = w.pins.front() {
        let mut n = w.clone();
        if n.manager.complete_pin(pin).is_ok() {
            n.pins.pop_front();
            next.push(n);
        }
    }
    next
}

fn count_paths(w: World, schedule: &[ModuleId], memo: &mut HashMap<World, u128>, report: &mut Exploration) -> u128 {
    if let Some(&n) = memo.get(&w) {
        return n;
    }
    if let Err(v) = w.manager.check_invariants() {
        report.violations.push(v);
    }
    for g in w.manager.groups() {
        report.max_staged = report.max_staged.max(g.staged().len());
        report.max_buffers = report.max_buffers.max(g.allocated_buffers());
    }
    let done = w.pc == schedule.len() && w.transfers.is_empty() && w.pins.is_empty();
    let next = successors(&w, schedule);
    let n = if done {
        1
    } else if next.is_empty() {
        report.deadlocks += 1;
        0
    } else {
        next.into_iter().map(|s| count_paths(s, schedule, memo, report)).sum()
    };
    memo.insert(w, n);
    n
}
